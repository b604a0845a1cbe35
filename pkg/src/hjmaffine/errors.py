"""Exception types raised across the package."""


class HJMError(Exception):
    """Base class for all package errors."""


class NotInSpan(HJMError, ValueError):
    pass


class DependentBasis(HJMError, ValueError):
    pass


class DivergentIntegral(HJMError, ValueError):
    """A weighted norm or inner product was requested for a curve outside H_beta."""


class DomainViolation(HJMError, ValueError):
    """A curve is outside the domain of d/dx in H_beta."""


class DependentDirections(HJMError, ValueError):
    pass


class BasisSelectionFailure(HJMError, RuntimeError):
    pass


class Inconclusive(HJMError, RuntimeError):
    pass


class SingularTransform(HJMError, ValueError):
    pass


class SchemeUnavailable(HJMError, ValueError):
    pass


class CFLViolation(HJMError, ValueError):
    pass


class UnsupportedPreset(HJMError, ValueError):
    pass
