# app/core/errors.py
"""
Domain errors for tail-meta.

Each error also subclasses the builtin that plain service code would raise
(ValueError for bad input, LookupError for unknown keys, OSError for IO), so
callers can keep catching the generic kind. `exit_code` follows the CLI
convention: 1 config/IO, 2 runtime incompatibility or divergence.
"""
from typing import Any, Optional


class TailError(Exception):
    exit_code = 1


# ---------------- numerics ----------------
class ShapeMismatch(TailError, ValueError):
    pass

class NotScalar(TailError, ValueError):
    pass

class NonFiniteValue(TailError, ValueError):
    pass

class InactiveTarget(TailError, ValueError):
    pass


# ---------------- tasks / episodes ----------------
class UnknownLabel(TailError, LookupError):
    pass

class InsufficientSamples(TailError, ValueError):
    exit_code = 2

class NotSynthetic(TailError, ValueError):
    pass

class InvalidConfig(TailError, ValueError):
    pass

class EmptyMetaDataset(TailError, ValueError):
    pass

class TaskTooSmall(TailError, ValueError):
    exit_code = 2

class LengthMismatch(TailError, ValueError):
    pass


# ---------------- encodings ----------------
class DimTooLarge(TailError, ValueError):
    exit_code = 2

class TooManyLabels(TailError, ValueError):
    exit_code = 2

class UnmappedLabel(TailError, LookupError):
    pass

class InvalidSchedule(TailError, ValueError):
    pass


# ---------------- model ----------------
class WidthMismatch(TailError, ValueError):
    exit_code = 2

class ConfigMismatch(TailError, ValueError):
    exit_code = 2


class DivergedLoss(TailError, RuntimeError):
    """Raised when the episode loss stops being finite; `state` is the last good trainer state."""
    exit_code = 2

    def __init__(self, message: str, state: Optional[Any] = None):
        super().__init__(message)
        self.state = state


# ---------------- persistence ----------------
class IoFailure(TailError, OSError):
    pass

class FormatVersionMismatch(TailError, ValueError):
    pass

class ChecksumMismatch(TailError, ValueError):
    pass
