"""Exception hierarchy shared by the solver, synthesis and simulation layers."""


class SparseHJBError(Exception):
    """Base class for all package errors."""


class ConfigurationError(SparseHJBError, ValueError):
    """Inconsistent dimensions, invalid parameters or malformed config files."""


class DomainError(SparseHJBError, ValueError):
    """A query point lies outside the region where an operation is defined."""


class UnsupportedError(SparseHJBError, NotImplementedError):
    """The requested configuration is outside the supported envelope."""


class InfeasibleResolutionError(SparseHJBError):
    """The stability bound would require more time steps than the hard cap."""


class DivergenceError(SparseHJBError, ArithmeticError):
    """A non-finite or out-of-bounds value appeared during time stepping."""


class HorizonTooLongError(DivergenceError):
    """The Riccati gain blew up before reaching the initial time."""
