"""Exception hierarchy.

Input problems derive from :class:`ValueError`; failures of the numerical
machinery derive from :class:`NumericalError`. The CLI maps the two families
to different exit codes.
"""


class NPHMMError(Exception):
    """Base class for all package errors."""


class ValidationError(NPHMMError, ValueError):
    """Bad input detected before any heavy computation."""


class OutOfDomain(ValidationError):
    pass


class DomainMismatch(ValidationError):
    pass


class ShapeMismatch(ValidationError):
    pass


class EmptyInput(ValidationError):
    pass


class TooShort(ValidationError):
    pass


class DegenerateData(ValidationError):
    pass


class NumericalError(NPHMMError, ArithmeticError):
    """The numerics could not deliver a trustworthy answer."""


class NonResolved(NumericalError):
    """Adaptive approximation hit its size cap without converging."""


class ZeroMatrix(NumericalError):
    pass


class RankDeficient(NumericalError):
    pass


class DegenerateState(NumericalError):
    """Filtering normalizer underflowed: the history has ~zero density."""


class ZeroProbabilityHistory(NumericalError):
    pass


class ConstructionFailed(NumericalError):
    pass
