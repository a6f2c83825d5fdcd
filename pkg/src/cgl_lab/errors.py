"""Exception hierarchy for cgl_lab.

Validation problems derive from :class:`ValueError`; failures of a numerical
procedure (blow-up, unreachable tolerances, ...) derive from
:class:`NumericalFailure` so that drivers can map them to a distinct exit code.
"""


class CglLabError(Exception):
    """Base class for all package errors."""


class ValidationError(CglLabError, ValueError):
    """Invalid input data."""


class InvalidGrid(ValidationError):
    pass


class GridMismatch(ValidationError):
    pass


class EmptyPlateau(ValidationError):
    pass


class EmptyInterior(ValidationError):
    pass


class FrequencyOutOfBox(ValidationError):
    pass


class DegreeOutOfRange(ValidationError):
    pass


class IndexOutOfRange(ValidationError):
    pass


class AmplitudeNonPositive(ValidationError):
    pass


class ConfigInvalid(ValidationError):
    """Configuration rejected; ``violations`` holds one message per problem."""

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class NumericalFailure(CglLabError, RuntimeError):
    """A numerical procedure could not produce a trustworthy result."""


class BlowUp(NumericalFailure):
    """The H^s norm crossed the blow-up threshold.

    ``time`` is the instant at which the threshold was crossed and
    ``trajectory`` (when available) holds the samples computed so far.
    """

    def __init__(self, message, time=None, trajectory=None):
        super().__init__(message)
        self.time = time
        self.trajectory = trajectory


class NonFinite(NumericalFailure):
    pass


class NotInSpan(NumericalFailure):
    pass


class IllConditioned(NumericalFailure):
    pass


class ToleranceUnreachable(NumericalFailure):
    pass


class BudgetExceeded(NumericalFailure):
    pass


class SaturationInsufficient(NumericalFailure):
    pass


class HoldFailure(NumericalFailure):
    pass


class InsufficientData(NumericalFailure):
    pass
