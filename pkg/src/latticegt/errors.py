class LatticeError(ValueError):
    """Base class for engine errors."""


class InactiveSubjectError(LatticeError):
    pass


class InvalidPriorError(LatticeError):
    pass


class SubjectCountError(LatticeError):
    pass


class ImpossibleResponseError(LatticeError):
    pass


class ConfigError(LatticeError):
    pass


class ScaleGuardError(LatticeError):
    """Refusal to run a job whose projected size exceeds the desk-scale guard."""
