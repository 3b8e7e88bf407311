"""Exception hierarchy shared by all fjlab modules."""


class FJError(Exception):
    """Base class for every error raised by fjlab."""


class ConfigError(FJError, ValueError):
    """Inconsistent or invalid experiment / system configuration."""


class MathError(FJError, ArithmeticError):
    """A mathematically infeasible request (no root, unstable system, ...)."""


class DomainError(MathError):
    """Transform evaluated outside its domain, e.g. an exponential MGF at theta >= rate."""


class NoRootError(MathError):
    def __init__(self, message, server=None):
        super().__init__(message)
        self.server = server


class StabilityError(MathError):
    pass


class DivergenceError(MathError):
    pass


class ParameterOrderError(MathError):
    pass


class InfeasibleError(MathError):
    pass


class RangeError(FJError, IndexError):
    """Support point outside {1..N}."""


class EmptyError(FJError, ValueError):
    pass
