"""
Custom exception classes for the strap tying control stack.

This module defines application-specific exceptions so that failures in the
simulator, the linking oracle, the neural kernel and the harness carry clear
messages and machine-readable error codes.
"""

from pathlib import Path
from typing import Optional, Sequence


class StrapMpcError(Exception):
    """
    Base exception class for all strap tying errors.

    Attributes:
        message: Human-readable error message
        details: Additional context or technical details
        error_code: Optional error code for programmatic handling
    """

    def __init__(self, message: str, details: Optional[str] = None, error_code: Optional[str] = None):
        """
        Initialize the base exception.

        Args:
            message: Primary error message
            details: Additional context or technical details
            error_code: Optional error code for programmatic handling
        """
        super().__init__(message)
        self.message = message
        self.details = details
        self.error_code = error_code

    def _context_parts(self) -> list:
        return []

    def __str__(self) -> str:
        """Return formatted error message."""
        parts = [self.message] + self._context_parts()
        if self.details:
            parts.append(f"Details: {self.details}")
        return " | ".join(parts)


class ValidationError(StrapMpcError):
    """
    Exception for validation failures on inputs and invariants.

    Attributes:
        field: The field or input that failed validation
        value: The invalid value
        constraint: Description of the violated constraint
    """

    def __init__(self, message: str, field: Optional[str] = None,
                 value: Optional[object] = None, constraint: Optional[str] = None, **kwargs):
        kwargs.setdefault("error_code", "VALIDATION_FAILED")
        super().__init__(message, **kwargs)
        self.field = field
        self.value = value
        self.constraint = constraint

    def _context_parts(self) -> list:
        parts = []
        if self.field:
            parts.append(f"Field: {self.field}")
        if self.value is not None:
            parts.append(f"Value: {self.value}")
        if self.constraint:
            parts.append(f"Constraint: {self.constraint}")
        return parts


class ConfigurationError(StrapMpcError):
    """
    Exception for configuration and settings errors.

    Attributes:
        config_key: The configuration key that caused the error
        config_value: The invalid configuration value
    """

    def __init__(self, message: str, config_key: Optional[str] = None,
                 config_value: Optional[object] = None, **kwargs):
        kwargs.setdefault("error_code", "CONFIG_ERROR")
        super().__init__(message, **kwargs)
        self.config_key = config_key
        self.config_value = config_value

    def _context_parts(self) -> list:
        parts = []
        if self.config_key:
            parts.append(f"Key: {self.config_key}")
        if self.config_value is not None:
            parts.append(f"Value: {self.config_value}")
        return parts


class GeometryError(ValidationError):
    """
    Exception for degenerate geometric inputs.

    Raised for hook parameters outside their domain, polylines with repeated
    vertices and cameras with impossible intrinsics.
    """

    def __init__(self, message: str, **kwargs):
        kwargs.setdefault("error_code", "DEGENERATE_GEOMETRY")
        super().__init__(message, **kwargs)


class SimulationDivergedError(StrapMpcError):
    """
    Exception raised when the rope solver produces non-finite state.

    Attributes:
        step: Simulation step index at which divergence was detected
        particle: Index of the first non-finite particle
    """

    def __init__(self, message: str = "Simulation diverged", step: Optional[int] = None,
                 particle: Optional[int] = None, **kwargs):
        kwargs.setdefault("error_code", "SIM_DIVERGED")
        super().__init__(message, **kwargs)
        self.step = step
        self.particle = particle

    def _context_parts(self) -> list:
        parts = []
        if self.step is not None:
            parts.append(f"Step: {self.step}")
        if self.particle is not None:
            parts.append(f"Particle: {self.particle}")
        return parts


class SingularConfigurationError(StrapMpcError):
    """
    Exception for near-coincident curve points in the linking sum.

    Attributes:
        min_distance: Smallest point-to-point distance found
        threshold: Singularity guard that was violated
    """

    def __init__(self, min_distance: float, threshold: float, **kwargs):
        message = "Curves are too close for the linking sum"
        kwargs.setdefault("error_code", "SINGULAR_CONFIGURATION")
        super().__init__(message, **kwargs)
        self.min_distance = min_distance
        self.threshold = threshold

    def _context_parts(self) -> list:
        return [f"Min distance: {self.min_distance:.3e}", f"Threshold: {self.threshold:.3e}"]


class ShapeMismatchError(ValidationError):
    """
    Exception for array shapes that do not match a network layout.

    Attributes:
        expected: Expected shape
        actual: Actual shape
    """

    def __init__(self, message: str, expected: Optional[Sequence[int]] = None,
                 actual: Optional[Sequence[int]] = None, **kwargs):
        kwargs.setdefault("error_code", "SHAPE_MISMATCH")
        super().__init__(message, **kwargs)
        self.expected = tuple(expected) if expected is not None else None
        self.actual = tuple(actual) if actual is not None else None

    def _context_parts(self) -> list:
        parts = []
        if self.expected is not None:
            parts.append(f"Expected: {self.expected}")
        if self.actual is not None:
            parts.append(f"Actual: {self.actual}")
        return parts


class TrainingDivergedError(StrapMpcError):
    """
    Exception raised when a training loss becomes non-finite.

    Attributes:
        epoch: Epoch at which the loss diverged
        loss: The offending loss value
    """

    def __init__(self, message: str, epoch: Optional[int] = None,
                 loss: Optional[float] = None, **kwargs):
        kwargs.setdefault("error_code", "TRAINING_DIVERGED")
        super().__init__(message, **kwargs)
        self.epoch = epoch
        self.loss = loss

    def _context_parts(self) -> list:
        parts = []
        if self.epoch is not None:
            parts.append(f"Epoch: {self.epoch}")
        if self.loss is not None:
            parts.append(f"Loss: {self.loss}")
        return parts


class CheckpointError(StrapMpcError):
    """
    Exception for missing, malformed or version-incompatible checkpoints.

    Attributes:
        path: Checkpoint path
        reason: Short reason code
    """

    def __init__(self, message: str, path: Optional[Path] = None,
                 reason: Optional[str] = None, **kwargs):
        kwargs.setdefault("error_code", "CHECKPOINT_ERROR")
        super().__init__(message, **kwargs)
        self.path = path
        self.reason = reason

    def _context_parts(self) -> list:
        parts = []
        if self.path:
            parts.append(f"Path: {self.path}")
        if self.reason:
            parts.append(f"Reason: {self.reason}")
        return parts


class DatasetError(CheckpointError):
    """Exception for unreadable or inconsistent transition datasets."""

    def __init__(self, message: str, **kwargs):
        kwargs.setdefault("error_code", "DATASET_ERROR")
        super().__init__(message, **kwargs)


class TrialError(StrapMpcError):
    """
    Exception for failures of a single closed-loop trial.

    Attributes:
        trial_id: Identifier of the trial
        seed: Seed of the trial
    """

    def __init__(self, message: str, trial_id: Optional[str] = None,
                 seed: Optional[int] = None, **kwargs):
        kwargs.setdefault("error_code", "TRIAL_ERROR")
        super().__init__(message, **kwargs)
        self.trial_id = trial_id
        self.seed = seed

    def _context_parts(self) -> list:
        parts = []
        if self.trial_id:
            parts.append(f"Trial: {self.trial_id}")
        if self.seed is not None:
            parts.append(f"Seed: {self.seed}")
        return parts


def handle_io_error(operation: str, path: Path, original_error: Exception) -> CheckpointError:
    """
    Convert an OS-level error on an artifact into an application exception.

    Args:
        operation: The operation that failed (load, save, ...)
        path: The path where the error occurred
        original_error: The original exception that was caught

    Returns:
        CheckpointError describing the failure
    """
    error_message = str(original_error)

    if isinstance(original_error, FileNotFoundError):
        return CheckpointError(f"Artifact not found during {operation}", path=path,
                               reason="missing", details=error_message)
    if isinstance(original_error, PermissionError):
        return CheckpointError(f"Permission denied during {operation}", path=path,
                               reason="permission", details=error_message)
    return CheckpointError(f"I/O error during {operation}", path=path,
                           reason="io", details=error_message)
