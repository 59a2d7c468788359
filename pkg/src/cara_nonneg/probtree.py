"""Finite filtered probability spaces represented as recombination-free trees.

Nodes are numbered ``0..n_k-1`` on every level ``k``.  An adapted process is a
list of 1-D arrays, one per level, so that ``X[k][i]`` is the value of ``X_k``
on node ``i``.  A sub-sigma-algebra of level ``k`` is a partition of the
level-``k`` nodes, given as an integer label per node.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

PROB_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class Tree:
    """Filtration ``F_0 ⊆ ... ⊆ F_T`` on a finite sample space.

    Attributes
    ----------
    parents : tuple of ndarray
        ``parents[k - 1][i]`` is the level-``k-1`` parent of node ``i`` of
        level ``k``; children of one parent are stored contiguously.
    probs : tuple of ndarray
        Unconditional probability of every node, ``probs[k]`` for level ``k``.
    """

    parents: tuple
    probs: tuple

    @property
    def horizon(self) -> int:
        return len(self.probs) - 1

    @property
    def sizes(self) -> list[int]:
        return [len(p) for p in self.probs]

    @property
    def n_nodes(self) -> int:
        return sum(self.sizes)

    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.sizes)])

    def node_levels(self) -> np.ndarray:
        """Level index of every node in flattened order."""
        return np.repeat(np.arange(self.horizon + 1), self.sizes)

    def flat_probs(self) -> np.ndarray:
        return np.concatenate(self.probs)

    def flatten(self, X) -> np.ndarray:
        return np.concatenate([np.asarray(x, dtype=float) for x in X])

    def unflatten(self, v) -> list[np.ndarray]:
        off = self.offsets()
        v = np.asarray(v, dtype=float)
        return [v[off[k]:off[k + 1]].copy() for k in range(self.horizon + 1)]

    def children(self, k: int, node: int) -> np.ndarray:
        """Indices (on level ``k + 1``) of the children of ``node`` at level ``k``."""
        return np.flatnonzero(self.parents[k] == node)

    def cond_probs(self, k: int) -> np.ndarray:
        """``P(node | parent)`` for the nodes of level ``k >= 1``."""
        return self.probs[k] / self.probs[k - 1][self.parents[k - 1]]

    def lift(self, y, k: int) -> np.ndarray:
        """Broadcast an ``F_{k-1}``-measurable array to the nodes of level ``k``."""
        return np.asarray(y, dtype=float)[self.parents[k - 1]]

    def expect(self, x, k: int) -> float:
        return float(np.dot(self.probs[k], x))

    def cond_parent(self, x, k: int) -> np.ndarray:
        """``E[X_k | F_{k-1}]`` as an array over level ``k - 1``."""
        num = np.bincount(self.parents[k - 1], weights=self.probs[k] * x,
                          minlength=self.sizes[k - 1])
        return num / self.probs[k - 1]

    def process(self, X) -> list[np.ndarray]:
        """Validate and convert ``X`` into a list of float arrays on this tree."""
        if len(X) != self.horizon + 1:
            raise ValueError(f"process has {len(X)} levels, tree has {self.horizon + 1}")
        out = []
        for k, x in enumerate(X):
            x = np.atleast_1d(np.asarray(x, dtype=float))
            if x.shape != (self.sizes[k],):
                raise ValueError(f"level {k}: expected {self.sizes[k]} values, got {x.shape}")
            out.append(x)
        return out

    def constant(self, c: float) -> list[np.ndarray]:
        return [np.full(n, float(c)) for n in self.sizes]

    def to_dict(self) -> dict:
        branching = [np.bincount(p, minlength=self.sizes[k]).tolist()
                     for k, p in enumerate(self.parents)]
        probs = [self.cond_probs(k + 1).tolist() for k in range(self.horizon)]
        return {"branching": branching, "probs": probs}


def build_tree(branching: Sequence, probs: Sequence | None = None) -> Tree:
    """Construct a tree level by level.

    Parameters
    ----------
    branching : sequence
        ``branching[k]`` gives the number of children of every node of level
        ``k`` (``k = 0..T-1``), either as one int shared by all nodes or as a
        list with one entry per node.
    probs : sequence, optional
        ``probs[k]`` lists the conditional probabilities of the level-``k+1``
        nodes, children grouped by parent in parent order.  Defaults to
        uniform branching probabilities.

    Examples
    --------
    >>> build_tree([3], [[0.2, 0.3, 0.5]]).probs[1]
    array([0.2, 0.3, 0.5])
    """
    if probs is not None and len(probs) != len(branching):
        raise ValueError("probs must have one entry per branching level")
    parents, uprobs = [], [np.ones(1)]
    for k, b in enumerate(branching):
        n_prev = len(uprobs[-1])
        counts = np.full(n_prev, b, dtype=int) if np.isscalar(b) else np.asarray(b, dtype=int)
        if counts.shape != (n_prev,):
            raise ValueError(f"level {k}: branching needs {n_prev} entries, got {counts.size}")
        if np.any(counts < 1):
            raise ValueError(f"level {k}: every node needs at least one child")
        par = np.repeat(np.arange(n_prev), counts)
        if probs is None:
            cond = 1.0 / counts[par]
        else:
            cond = np.asarray(probs[k], dtype=float)
            if cond.shape != par.shape:
                raise ValueError(
                    f"level {k + 1}: {cond.size} probabilities for {par.size} nodes "
                    "(orphan or missing node)")
            if np.any(~np.isfinite(cond)) or np.any(cond <= 0):
                raise ValueError(f"level {k + 1}: probabilities must be strictly positive")
            sums = np.bincount(par, weights=cond, minlength=n_prev)
            if np.max(np.abs(sums - 1.0)) > PROB_TOL:
                raise ValueError(f"level {k + 1}: conditional probabilities do not sum to 1")
        parents.append(par)
        uprobs.append(uprobs[-1][par] * cond)
    return Tree(parents=tuple(parents), probs=tuple(uprobs))


def tree_from_dict(d: dict) -> Tree:
    return build_tree(d.get("branching", []), d.get("probs"))


def random_tree(rng: np.random.Generator, horizon: int, max_branch: int = 3,
                max_leaves: int = 27) -> Tree:
    """Random tree with at most ``max_leaves`` terminal nodes."""
    branching, probs, n = [], [], 1
    for k in range(horizon):
        room = max(max_leaves // n, 1)
        counts = rng.integers(1, min(max_branch, room) + 1, size=n)
        while counts.sum() > max_leaves:
            counts[np.argmax(counts)] -= 1
        cond = []
        for c in counts:
            w = rng.uniform(0.2, 1.0, size=c)
            cond.extend(w / w.sum())
        branching.append(counts.tolist())
        probs.append(cond)
        n = int(counts.sum())
    tree = build_tree(branching, probs)
    return tree


def block_labels(labels, n: int) -> np.ndarray:
    """Canonical partition labels ``0..n_blocks-1`` for ``n`` nodes."""
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ValueError(f"partition has {labels.size} labels for {n} nodes")
    return np.unique(labels, return_inverse=True)[1].astype(int).ravel()


def trivial_partition(n: int) -> np.ndarray:
    return np.zeros(n, dtype=int)


def finest_partition(n: int) -> np.ndarray:
    return np.arange(n)


def cond_expect(tree: Tree, x, k: int, labels) -> np.ndarray:
    """``E[X_k | G]`` for the sub-algebra ``G`` of level ``k`` given by ``labels``.

    The result is returned node by node, constant on every block.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (tree.sizes[k],):
        raise ValueError(f"X must have {tree.sizes[k]} values on level {k}")
    lab = block_labels(labels, tree.sizes[k])
    p = tree.probs[k]
    mass = np.bincount(lab, weights=p)
    return (np.bincount(lab, weights=p * x) / mass)[lab]


def ess_inf(tree: Tree, x, k: int, labels) -> np.ndarray:
    """Essential infimum of ``X_k`` given the partition: the block minimum."""
    x = np.asarray(x, dtype=float)
    if x.shape != (tree.sizes[k],):
        raise ValueError(f"X must have {tree.sizes[k]} values on level {k}")
    lab = block_labels(labels, tree.sizes[k])
    mins = np.full(lab.max() + 1, np.inf)
    np.minimum.at(mins, lab, x)
    return mins[lab]


def refines_parents(tree: Tree, k: int, labels) -> bool:
    """True when every block of the level-``k`` partition sits under one parent.

    Equivalent to ``F_{k-1} ⊆ H_k``.
    """
    lab = block_labels(labels, tree.sizes[k])
    par = tree.parents[k - 1]
    first = np.full(lab.max() + 1, -1)
    for node, b in enumerate(lab):
        if first[b] < 0:
            first[b] = par[node]
        elif first[b] != par[node]:
            return False
    return True
