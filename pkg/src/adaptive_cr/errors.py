"""Exception types raised across the package."""


class AdaptiveCRError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(AdaptiveCRError, ValueError):
    """Invalid user-supplied configuration (mesh sizes, corners, theta...)."""


class GeometryError(AdaptiveCRError, ValueError):
    """Degenerate or inverted element."""


class PatchError(AdaptiveCRError, ValueError):
    """An element patch was requested for a boundary edge."""


class ContractError(AdaptiveCRError, ValueError):
    """Array sizes or arguments violate a function's contract."""


class ShiftError(AdaptiveCRError, ArithmeticError):
    """The shifted pencil ``A - sigma*M`` could not be factorized."""


class ConvergenceError(AdaptiveCRError, ArithmeticError):
    """The eigensolver did not converge within the iteration budget.

    Attributes
    ----------
    best_residual : float
        Smallest target residual observed before giving up.
    """

    def __init__(self, message, best_residual=float("inf")):
        super().__init__(message)
        self.best_residual = best_residual
