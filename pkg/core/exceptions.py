"""
Custom exception classes for the Deep Language Network trainer.

Every error raised by library code derives from ``DLNError`` and carries a
``details`` dict so that log records and CLI diagnostics can name the
offending request, field, file or line.
"""

from typing import Any, Dict, Optional, Sequence


def _present(**values: Any) -> Dict[str, Any]:
    """Keyword context with the unset entries dropped."""
    return {key: value for key, value in values.items() if value is not None and value != ''}


class DLNError(Exception):
    """Base exception for all trainer errors."""

    prefix = ""

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        self.message = f"{self.prefix}: {message}" if self.prefix else message
        self.details = dict(details or {})
        super().__init__(self.message)

    def __str__(self) -> str:
        if not self.details:
            return self.message
        return f"{self.message} - Details: {self.details}"


class BackendError(DLNError):
    """Raised when a language-model backend call fails."""

    prefix = "Backend error"

    def __init__(self, message: str, endpoint: Optional[str] = None, status_code: Optional[int] = None,
                 details: Optional[Dict[str, Any]] = None):
        super().__init__(message, {**(details or {}), **_present(endpoint=endpoint, status_code=status_code)})


class BackendUnreachableError(BackendError):
    """Raised after bounded retries when the endpoint cannot be reached."""

    prefix = "Backend unreachable"


class ContextTooLongError(BackendError):
    """Raised when a request exceeds the model's context window. Never retried."""

    prefix = "Context too long"

    def __init__(self, message: str, endpoint: Optional[str] = None, request_index: Optional[int] = None,
                 context_length: Optional[int] = None):
        super().__init__(message, endpoint=endpoint, status_code=400,
                         details=_present(request_index=request_index, context_length=context_length))


class ContinuationUnscoreableError(BackendError):
    """Raised when the endpoint does not echo per-token log-probs."""

    prefix = "Continuation unscoreable"


class BatchRequestError(BackendError):
    """Raised when part of a batch still fails after retries; the whole batch is aborted."""

    prefix = "Batch request failed"

    def __init__(self, message: str, failed_indices: Sequence[int], cause: Optional[Exception] = None):
        self.failed_indices = list(failed_indices)
        self.cause = cause
        super().__init__(message, details=_present(failed_indices=self.failed_indices,
                                                   cause=str(cause) if cause is not None else None))


class TemplateError(DLNError):
    """Raised when a template document is invalid."""

    prefix = "Template error"

    def __init__(self, message: str, template_name: Optional[str] = None, file_path: Optional[str] = None):
        super().__init__(message, _present(template_name=template_name, file_path=file_path))


class MissingBindingError(DLNError):
    prefix = "Missing binding"

    def __init__(self, placeholder: str, template_name: Optional[str] = None):
        self.placeholder = placeholder
        super().__init__(f"'{placeholder}' is not bound",
                         _present(placeholder=placeholder, template_name=template_name))


class ScoringError(DLNError):
    """Raised for invalid numeric inputs to the scoring functions."""

    prefix = "Scoring error"

    def __init__(self, message: str, index: Optional[int] = None, value: Optional[Any] = None):
        super().__init__(message, _present(index=index, value=None if value is None else str(value)))


class OracleError(DLNError):
    """Raised when an exact computation cannot be carried out."""

    prefix = "Oracle error"


class SpaceTooLargeError(OracleError):
    def __init__(self, size: int, limit: int):
        super().__init__(f"space of {size} strings exceeds the guard of {limit}", {'size': size, 'limit': limit})


class DataError(DLNError):
    """Raised when a dataset file is malformed or cannot satisfy a split."""

    prefix = "Data error"

    def __init__(self, message: str, file_path: Optional[str] = None, line_number: Optional[int] = None):
        super().__init__(message, _present(file_path=file_path, line_number=line_number))


class ConfigurationError(DLNError):
    """Raised when a run or sweep configuration is invalid or missing."""

    prefix = "Configuration error"

    def __init__(self, message: str, config_name: Optional[str] = None, field: Optional[str] = None):
        self.field = field
        super().__init__(message, _present(config_name=config_name, field=field))


class ValidationError(DLNError):
    """Raised when an argument or value object is out of range."""

    prefix = "Validation error"

    def __init__(self, message: str, field: Optional[str] = None, value: Optional[Any] = None):
        super().__init__(message, _present(field=field, value=None if value is None else str(value)))


class CheckpointError(DLNError):
    """Raised when checkpoints or run directories cannot be read or written."""

    prefix = "Checkpoint error"

    def __init__(self, message: str, file_path: Optional[str] = None, operation: Optional[str] = None):
        super().__init__(message, _present(file_path=file_path, operation=operation))


class TrainingAbortedError(DLNError):
    """Raised when a backend failure ends a run; the last state is already on disk."""

    prefix = "Training aborted"

    def __init__(self, message: str, checkpoint_path: Optional[str] = None, cause: Optional[Exception] = None):
        self.checkpoint_path = checkpoint_path
        self.cause = cause
        super().__init__(message, _present(checkpoint_path=checkpoint_path,
                                           cause=str(cause) if cause is not None else None))
