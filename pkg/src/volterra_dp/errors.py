"""Exception hierarchy shared by all solvers."""


class VolterraDPError(Exception):
    pass


class DomainError(VolterraDPError, ValueError):
    """Arguments outside the kernel domain (s <= t <= T, u in K, ...)."""


class UnsupportedDerivativeError(VolterraDPError):
    """Requested t-derivative order exceeds what the kernel provides."""


class ConvergenceError(VolterraDPError):
    """Fixed-point iteration on the implicit diagonal term did not converge."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class DivergenceError(VolterraDPError):
    """State became non-finite during time stepping."""

    def __init__(self, message, last_valid_time=None):
        super().__init__(message)
        self.last_valid_time = last_valid_time


class BoxTooSmallError(VolterraDPError):
    """DP state box does not enclose the flow."""

    def __init__(self, message, suggested_inflation=None):
        super().__init__(message)
        self.suggested_inflation = suggested_inflation


class ConfigError(VolterraDPError):
    def __init__(self, message, field=None, line=None):
        loc = ""
        if field is not None:
            loc = f"field '{field}'"
            if line is not None:
                loc += f" (line {line})"
            loc += ": "
        super().__init__(loc + message)
        self.field = field
        self.line = line
