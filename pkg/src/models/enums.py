"""
Enumerations for the strap tying control stack.

This module defines the enumerated identifiers used across the simulator,
the learned models, the planner and the evaluation harness.
"""

import logging
from enum import Enum, auto


class HookFamily(Enum):
    """
    Hook shape families, mild (H1) to hard (H5) topological difficulty.

    Values are the identifiers used in configs, CSV rows and trial logs.
    """
    H1 = "H1"
    H2 = "H2"
    H3 = "H3"
    H4 = "H4"
    H5 = "H5"

    def __str__(self) -> str:
        return self.value


class MaterialId(Enum):
    """
    Strap material presets.

    Values:
        M1: Compliant strap
        M2: Medium strap
        M3: Stiff strap
    """
    M1 = "M1"
    M2 = "M2"
    M3 = "M3"

    def __str__(self) -> str:
        return self.value

    @property
    def description(self) -> str:
        """Return the qualitative stiffness label."""
        descriptions = {
            MaterialId.M1: "compliant",
            MaterialId.M2: "medium",
            MaterialId.M3: "stiff",
        }
        return descriptions[self]


class AgentId(Enum):
    """The two agents that take turns in the planner."""
    ROB = "rob"
    BAR = "bar"

    def __str__(self) -> str:
        return self.value

    @property
    def other(self) -> "AgentId":
        """Return the agent whose turn comes next."""
        return AgentId.BAR if self is AgentId.ROB else AgentId.ROB


class Method(Enum):
    """
    Control methods compared by the evaluation harness.

    Values:
        TURN_TAKING: Robot and bar alternate planned turns
        BASELINE_UNCONTROLLED: Robot plans alone, bar is a passive damped joint
        BASELINE_FIXED: Robot plans alone, bar angle never changes
    """
    TURN_TAKING = "cart-mpc"
    BASELINE_UNCONTROLLED = "baseline-uncontrolled"
    BASELINE_FIXED = "baseline-fixed"

    def __str__(self) -> str:
        return self.value

    @classmethod
    def _missing_(cls, value):
        # logs and configs written before the rename
        if value == "turn-taking":
            return cls.TURN_TAKING
        return None

    @property
    def is_baseline(self) -> bool:
        """Check if this method is a single-agent baseline."""
        return self is not Method.TURN_TAKING

    @property
    def baseline_mode(self) -> "BaselineMode":
        """Return the bar mode used by a baseline method."""
        if self is Method.BASELINE_UNCONTROLLED:
            return BaselineMode.UNCONTROLLED
        if self is Method.BASELINE_FIXED:
            return BaselineMode.FIXED
        raise ValueError(f"{self} is not a baseline method")


class BaselineMode(Enum):
    """Bar behavior for single-agent baselines."""
    UNCONTROLLED = "uncontrolled"
    FIXED = "fixed"

    def __str__(self) -> str:
        return self.value


class BarMode(Enum):
    """
    How the simulator advances the bar joint.

    Values:
        KINEMATIC: Bar angle follows the commanded bar action exactly
        PASSIVE: Bar is a damped revolute joint driven by rope contact torques
    """
    KINEMATIC = auto()
    PASSIVE = auto()


class Activation(Enum):
    """Activation functions available to dense layers."""
    TANH = "tanh"
    RELU = "relu"
    IDENTITY = "identity"

    def __str__(self) -> str:
        return self.value


class SplitTag(Enum):
    """Dataset split tags, assigned per episode."""
    TRAIN = "train"
    VAL = "val"
    TEST = "test"

    def __str__(self) -> str:
        return self.value

    @property
    def code(self) -> int:
        """Return the integer code stored in dataset files."""
        codes = {SplitTag.TRAIN: 0, SplitTag.VAL: 1, SplitTag.TEST: 2}
        return codes[self]


class SelectionMode(Enum):
    """
    How a planner turn converts scored candidates into an executed action.

    Values:
        ARGMIN: Execute the lowest-cost candidate (ties to lowest index)
        MPPI: Execute the exponentially weighted candidate average
    """
    ARGMIN = "argmin"
    MPPI = "mppi"

    def __str__(self) -> str:
        return self.value


class LogLevel(Enum):
    """Verbosity names accepted by ``--log-level``."""
    DEBUG = "debug"
    INFO = "info"
    WARNING = "warning"
    ERROR = "error"
    CRITICAL = "critical"

    def __str__(self) -> str:
        return self.value

    @property
    def numeric_level(self) -> int:
        """Matching level of the standard ``logging`` module."""
        return logging.getLevelName(self.name)
