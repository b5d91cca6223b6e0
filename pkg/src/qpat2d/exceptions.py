"""Error types shared across the toolkit."""


class GridMismatchError(ValueError):
    """Operands live on different grids."""


class SolverError(RuntimeError):
    """A linear solve broke down or missed its residual tolerance."""

    def __init__(self, message: str, residual: float | None = None):
        if residual is not None:
            message = f"{message} (achieved relative residual {residual:.3e})"
        super().__init__(message)
        self.residual = residual


class SolverDivergence(RuntimeError):
    """The outer minimization blew up; carries the iteration log."""

    def __init__(self, message: str, log: list | None = None):
        super().__init__(message)
        self.log = log or []


class EdgeDetectionError(RuntimeError):
    """A detection stage was left without any valid pixels."""


class RecoveryError(RuntimeError):
    """Analytic region-wise recovery could not produce a value."""


class ConfigError(ValueError):
    """Invalid configuration file or command arguments."""
