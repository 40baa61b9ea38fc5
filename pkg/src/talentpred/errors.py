"""Exception hierarchy shared by every module."""


class TalentError(Exception):
    """Base class for all errors raised by talentpred."""


class DimensionError(TalentError, ValueError):
    """Array shapes do not line up."""


class DomainError(TalentError, ValueError):
    """An argument lies outside the domain of the operation."""


class ConfigError(TalentError, ValueError):
    """Invalid or inconsistent configuration."""


class TrainingError(TalentError, RuntimeError):
    """Optimisation produced a non-finite value."""


class GradCheckError(TalentError, RuntimeError):
    """Finite-difference check hit a non-finite value."""


class UndefinedMetricError(TalentError, ValueError):
    """A metric is undefined for the given input (e.g. single-class ROC)."""


class IngestionError(TalentError, ValueError):
    """Malformed input file. Carries the offending line and field when known."""

    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class PersistenceError(TalentError, ValueError):
    """A saved model could not be read back."""


class SkipRecord(TalentError):
    """A student has no usable data before the prediction horizon."""
