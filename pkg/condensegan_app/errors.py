"""Exception hierarchy shared by every condensegan module."""

from __future__ import annotations

from typing import Any, Optional


class CondenseError(Exception):
    """Base class for all errors raised by the toolkit.

    ``kind`` is a short machine-readable tag used by the command-line error
    line; ``details`` carries extra ``key=value`` context.
    """

    kind = "error"

    def __init__(self, message: str, details: Optional[dict[str, Any]] = None) -> None:
        super().__init__(message)
        self.message = message
        self.details: dict[str, Any] = dict(details or {})


class DimensionError(CondenseError, ValueError):
    kind = "dimension"


class ConfigurationError(CondenseError, ValueError):
    kind = "configuration"


class DomainError(CondenseError, ValueError):
    kind = "domain"


class OptimizerStateError(CondenseError, RuntimeError):
    kind = "optimizer_state"


class NonFiniteError(CondenseError, FloatingPointError):
    kind = "non_finite"


class CalibrationError(CondenseError, ValueError):
    kind = "calibration"


class UnsupportedTopologyError(CondenseError, ValueError):
    kind = "unsupported_topology"


class PlanError(CondenseError, ValueError):
    kind = "plan"


class StructuralError(CondenseError, ValueError):
    kind = "structural"


class CheckpointFormatError(CondenseError, ValueError):
    kind = "checkpoint_format"


class CheckpointCorruptError(CondenseError, ValueError):
    kind = "checkpoint_corrupt"


class UnsupportedVersionError(CondenseError, ValueError):
    kind = "unsupported_version"
