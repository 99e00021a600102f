"""Exception hierarchy shared across the package."""

from __future__ import annotations


class QGenError(Exception):
    """Base class for all package errors."""


class ContractViolation(QGenError, ValueError):
    """A precondition or invariant of an operation does not hold."""


class DatasetError(QGenError):
    """Raised in strict mode when one or more dataset rows fail validation."""

    def __init__(self, errors):
        self.errors = list(errors)
        head = "; ".join(str(e) for e in self.errors[:5])
        more = f" (+{len(self.errors) - 5} more)" if len(self.errors) > 5 else ""
        super().__init__(f"{len(self.errors)} invalid row(s): {head}{more}")


class ExemplarShortage(ContractViolation):
    def __init__(self, attribute: str, available: int, needed: int):
        self.attribute = attribute
        self.available = available
        self.needed = needed
        super().__init__(
            f"need {needed} exemplars with attribute {attribute!r}, only {available} available"
        )


class SchemaVersionError(QGenError):
    """Scorer model was trained against a different feature schema."""


class TrainingDiverged(QGenError):
    """Non-finite loss during ranker training."""


class EmptyCandidatePool(QGenError):
    pass


# -- backend errors --


class BackendError(QGenError):
    retryable = False

    def __init__(self, message: str, *, record_id: str | None = None):
        self.record_id = record_id
        super().__init__(message)

    def with_record(self, record_id: str) -> "BackendError":
        self.record_id = record_id
        self.args = (f"[record {record_id}] {self.args[0]}",)
        return self


class TransportError(BackendError):
    """Network-level failure; safe to retry. ``attempts`` counts requests made."""

    retryable = True

    def __init__(self, message: str, *, attempts: int = 1, record_id: str | None = None):
        self.attempts = attempts
        super().__init__(message, record_id=record_id)


class ApiError(BackendError):
    """The provider answered with an error payload."""

    def __init__(self, message: str, *, status: int | None = None, record_id: str | None = None):
        self.status = status
        super().__init__(message, record_id=record_id)


class QuotaExceeded(BackendError):
    pass


class CapabilityError(BackendError):
    pass
