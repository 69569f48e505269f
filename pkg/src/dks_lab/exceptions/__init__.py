"""Exception classes package.

This package contains all exception classes used throughout dks-lab.
All exceptions inherit from DksException for consistent error handling.
"""

from dks_lab.exceptions.base import (
    CheckpointException,
    ConfigurationException,
    DataException,
    DataIOException,
    DksException,
    TrainingAbortedException,
    UsageException,
    VerificationException,
)

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
