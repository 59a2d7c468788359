"""Exception types shared across the package."""


class ArbitrageError(ValueError):
    """The market admits no strictly positive state price density."""


class ConvergenceError(RuntimeError):
    """An iterative solver stopped without meeting its tolerance.

    The best residuals reached are kept on ``diagnostics`` so callers (the CLI
    in particular) can report them.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})
