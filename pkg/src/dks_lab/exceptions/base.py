"""Base exception classes for dks-lab.

This module defines the exception hierarchy used throughout the package.
All exceptions inherit from DksException for consistent error handling, and
every class carries the process exit code the CLI reports for it.
"""

from typing import ClassVar


class DksException(Exception):
    """Base exception for all dks-lab errors.

    Attributes:
        message: The error message describing what went wrong.
        hint: Optional hint for how to resolve the error.
        exit_code: Exit code reported by the CLI when this error escapes a command.
    """

    exit_code: ClassVar[int] = 1

    def __init__(self, message: str, hint: str | None = None) -> None:
        """Initialize DksException.

        Args:
            message: The error message.
            hint: Optional hint for resolution.
        """
        self.message = message
        self.hint = hint
        super().__init__(message)

    def __str__(self) -> str:
        """Return string representation with hint if available."""
        if self.hint:
            return f"{self.message}\nHint: {self.hint}"
        return self.message


class ConfigurationException(DksException):
    """Configuration is invalid.

    Raised for shape mismatches between operands, invalid block or model specs,
    down-sampling parity violations, unknown heads and malformed run configs.
    """

    exit_code: ClassVar[int] = 2


class DataException(DksException):
    """Dataset contents are invalid.

    Raised when labels fall outside [0, K) or a dataset directory is malformed.
    """

    exit_code: ClassVar[int] = 2


class DataIOException(DataException):
    """A data file could not be read or its payload is corrupt.

    Raised for missing or unreadable raw dumps and dataset blobs, damaged gzip
    streams and payloads truncated mid-record.
    """

    exit_code: ClassVar[int] = 4


class UsageException(DksException):
    """An API was called in a way it does not support.

    Raised for example when backward is called on a non-scalar tensor.
    """

    exit_code: ClassVar[int] = 2


class VerificationException(DksException):
    """A verification suite failed.

    Attributes:
        fixture: Name of the failing fixture.
    """

    exit_code: ClassVar[int] = 1

    def __init__(self, fixture: str, detail: str) -> None:
        """Initialize VerificationException.

        Args:
            fixture: Name of the failing fixture.
            detail: Description of the failed check.
        """
        self.fixture = fixture
        super().__init__(f"Verification failed for fixture '{fixture}': {detail}")


class TrainingAbortedException(DksException):
    """Training produced a non-finite loss.

    Attributes:
        epoch: Epoch in which the loss became non-finite.
        batch: Batch index within the epoch.
        value: The offending loss value.
    """

    exit_code: ClassVar[int] = 3

    def __init__(self, epoch: int, batch: int, value: float) -> None:
        """Initialize TrainingAbortedException.

        Args:
            epoch: Epoch in which the loss became non-finite.
            batch: Batch index within the epoch.
            value: The offending loss value.
        """
        self.epoch = epoch
        self.batch = batch
        self.value = value
        message = f"Non-finite loss {value!r} at epoch {epoch}, batch {batch}"
        hint = "Lower train.lr0 or check the dataset normalization statistics."
        super().__init__(message, hint)


class CheckpointException(DksException):
    """Checkpoint I/O failed.

    Raised when a manifest or blob is missing, corrupt, or does not match the
    model it is loaded into.
    """

    exit_code: ClassVar[int] = 4


__all__ = [
    "CheckpointException",
    "ConfigurationException",
    "DataException",
    "DataIOException",
    "DksException",
    "TrainingAbortedException",
    "UsageException",
    "VerificationException",
]
