"""Exception hierarchy for the polarize package."""


class PolarizeError(Exception):
    """Base class for all package errors."""


class InvalidInput(PolarizeError, ValueError):
    """A value violates a documented precondition."""


class SingularTensor(PolarizeError, ArithmeticError):
    pass


class NotPositiveDefinite(PolarizeError, ValueError):
    pass


class NonUnitDirection(InvalidInput):
    pass


class DegenerateFormula(PolarizeError, ArithmeticError):
    pass


class TargetOffCurve(InvalidInput):
    pass


class TargetOutOfRange(InvalidInput):
    pass


class UnsupportedDimension(InvalidInput):
    pass


class SolverDiverged(PolarizeError, RuntimeError):
    """Krylov iteration hit its cap before reaching the requested tolerance."""


class EmptyInclusion(PolarizeError, ValueError):
    pass


class ZeroFraction(PolarizeError, ValueError):
    pass


class UnresolvedInclusion(InvalidInput):
    pass
