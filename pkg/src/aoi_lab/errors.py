"""Exception hierarchy shared by every module."""


class AoILabError(Exception):
    pass


class ParameterError(AoILabError, ValueError):
    """Argument outside the documented domain of an operation."""


class DomainError(AoILabError, ValueError):
    """Operation applied to an object it is not defined on (e.g. node not in tree)."""


class ShapeError(AoILabError, ValueError):
    pass


class ParseError(AoILabError, ValueError):
    def __init__(self, lineno: int, line: str, reason: str):
        self.lineno = lineno
        self.line = line
        self.reason = reason
        super().__init__(f"line {lineno}: {reason}: {line!r}")


class CapacityError(AoILabError, RuntimeError):
    """Exhaustive routine refused because the input is too large."""


class ConvergenceError(AoILabError, RuntimeError):
    def __init__(self, message: str, residual: float, iterations: int):
        self.residual = residual
        self.iterations = iterations
        super().__init__(f"{message} (residual={residual:.3e} after {iterations} iterations)")


class UsageError(AoILabError, RuntimeError):
    """API misuse, e.g. asking for a gradient of a value that is not on the tape."""
