"""
Configuration sections, JSON config files and command-line overrides.

Every tunable of the stack lives in one frozen dataclass section. A config
file is a JSON object with one object per section; missing keys keep their
defaults and unknown keys are rejected. Any field can be overridden with
``section.field=value`` strings whose values are parsed as JSON literals.
"""

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Tuple

from .exceptions import ConfigurationError

OUTPUT_ROOT_ENV = "STRAP_MPC_OUTPUT_ROOT"
DEFAULT_OUTPUT_ROOT = "runs"

Vec3Tuple = Tuple[float, float, float]


@dataclass(frozen=True)
class SceneConfig:
    """
    Desk-scale scene layout (meters).

    The bar rotates about ``bar_axis`` through ``bar_pivot``; the hook hangs
    from the pivot. The strap's far end is pinned at ``anchor``; the gripper
    starts at ``gripper_start`` holding the strap's near end at ``grip_offset``
    in the gripper frame.
    """
    bar_pivot: Vec3Tuple = (0.0, 0.0, 0.40)
    bar_axis: Vec3Tuple = (0.0, 1.0, 0.0)
    hook_tube_radius: float = 0.003
    rope_particles: int = 24
    rope_length: float = 0.30
    rope_radius: float = 0.004
    rope_mass: float = 0.03
    anchor: Vec3Tuple = (0.04, -0.12, 0.18)
    gripper_start: Vec3Tuple = (0.04, -0.10, 0.30)
    grip_offset: Vec3Tuple = (0.0, 0.0, -0.015)
    gripper_start_jitter: float = 0.02
    bar_start_jitter: float = 0.3
    slack_anchor_drop: float = 0.5
    closure_drop: float = 0.5
    workspace_half_extent: float = 0.25


@dataclass(frozen=True)
class SimConfig:
    """Rope solver settings."""
    dt: float = 0.02
    substeps: int = 4
    iterations: int = 20
    gravity: float = 9.81
    friction: float = 0.0
    bar_inertia: float = 2e-4
    bar_damping: float = 4.0
    contact_margin: float = 0.02
    settle_energy: float = 1e-6


@dataclass(frozen=True)
class HookPreset:
    """Parameter tuple of one hook family (lengths in m, angles in rad)."""
    radius: float
    opening_angle: float
    tilt: float
    throat_depth: float
    samples: int = 128


@dataclass(frozen=True)
class MaterialPreset:
    """Compliances (m/N), damping (1/s) and the stretch tolerance (m) of a strap material."""
    stretch_compliance: float
    bending_compliance: float
    damping: float
    tol_stretch: float


def _deg(value: float) -> float:
    return value * 3.141592653589793 / 180.0


DEFAULT_HOOKS: Dict[str, HookPreset] = {
    "H1": HookPreset(radius=0.040, opening_angle=_deg(150.0), tilt=0.0, throat_depth=0.040),
    "H2": HookPreset(radius=0.035, opening_angle=_deg(130.0), tilt=_deg(5.0), throat_depth=0.040),
    "H3": HookPreset(radius=0.050, opening_angle=_deg(110.0), tilt=_deg(10.0), throat_depth=0.030),
    "H4": HookPreset(radius=0.025, opening_angle=_deg(90.0), tilt=_deg(15.0), throat_depth=0.050),
    "H5": HookPreset(radius=0.020, opening_angle=_deg(60.0), tilt=_deg(20.0), throat_depth=0.050),
}

DEFAULT_MATERIALS: Dict[str, MaterialPreset] = {
    "M1": MaterialPreset(stretch_compliance=1e-4, bending_compliance=1e-2, damping=0.8, tol_stretch=3e-3),
    "M2": MaterialPreset(stretch_compliance=1e-5, bending_compliance=1e-3, damping=1.0, tol_stretch=2e-3),
    "M3": MaterialPreset(stretch_compliance=1e-6, bending_compliance=1e-4, damping=1.2, tol_stretch=1e-3),
}


@dataclass(frozen=True)
class CameraConfig:
    """One fixed pinhole camera aimed with a look-at triple."""
    name: str
    eye: Vec3Tuple
    target: Vec3Tuple
    up: Vec3Tuple
    focal: float = 500.0
    width: int = 640
    height: int = 480


DEFAULT_CAMERAS: Tuple[CameraConfig, CameraConfig] = (
    CameraConfig(name="bar", eye=(0.04, 0.0, 0.80), target=(0.04, 0.0, 0.25), up=(0.0, 1.0, 0.0)),
    CameraConfig(name="wrist", eye=(0.04, -0.45, 0.40), target=(0.04, 0.0, 0.30), up=(0.0, 0.0, 1.0)),
)


@dataclass(frozen=True)
class KeypointConfig:
    """Keypoints per camera and history length."""
    count: int = 8
    history: int = 20


@dataclass(frozen=True)
class DataConfig:
    """Exploration data generation."""
    episodes: int = 1000
    steps: int = 150
    approach_fraction: float = 0.3
    settle_steps: int = 50
    val_fraction: float = 0.1
    test_fraction: float = 0.1
    hook: str = "H1"
    material: str = "M1"
    slack: float = 0.0


@dataclass(frozen=True)
class DynamicsHyper:
    """Dynamics MLP training hyperparameters."""
    hidden_width: int = 256
    layers: int = 7
    activation: str = "relu"
    learning_rate: float = 1e-3
    epochs: int = 200
    batch_size: int = 256
    patience: int = 20
    predict_delta: bool = True
    seed: int = 0


@dataclass(frozen=True)
class AmortizerHyper:
    """Recurrent cost surrogate training hyperparameters."""
    hidden_width: int = 64
    learning_rate: float = 1e-3
    epochs: int = 100
    batch_size: int = 128
    patience: int = 15
    seed: int = 0


@dataclass(frozen=True)
class PlannerConfig:
    """
    Sampling planner settings.

    Standard deviations default to half of each action bound; samples are
    clipped to the bounds.
    """
    candidates: int = 256
    rollout_depth: int = 3
    rob_translation_std: float = 0.005
    rob_rotation_std: float = 0.025
    bar_std: float = 0.025
    w_link: float = 1.0
    w_smooth: float = 0.1
    w_effort: float = 0.01
    horizon: int = 300
    goal_check_period: int = 10
    selection: str = "argmin"
    mppi_temperature: float = 0.05

    def __post_init__(self):
        if self.candidates < 1:
            raise ConfigurationError("planner.candidates must be >= 1",
                                     config_key="planner.candidates", config_value=self.candidates)
        if self.rollout_depth < 1:
            raise ConfigurationError("planner.rollout_depth must be >= 1",
                                     config_key="planner.rollout_depth", config_value=self.rollout_depth)
        for name in ("w_link", "w_smooth", "w_effort"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"planner.{name} must be >= 0",
                                         config_key=f"planner.{name}", config_value=getattr(self, name))
        if self.w_link <= 0:
            raise ConfigurationError("planner.w_link must be > 0",
                                     config_key="planner.w_link", config_value=self.w_link)
        if self.horizon < 0:
            raise ConfigurationError("planner.horizon must be >= 0",
                                     config_key="planner.horizon", config_value=self.horizon)
        if self.goal_check_period < 1:
            raise ConfigurationError("planner.goal_check_period must be >= 1",
                                     config_key="planner.goal_check_period",
                                     config_value=self.goal_check_period)
        if self.selection not in ("argmin", "mppi"):
            raise ConfigurationError("planner.selection must be argmin or mppi",
                                     config_key="planner.selection", config_value=self.selection)


@dataclass(frozen=True)
class GoalConfig:
    """
    Release-and-settle goal test.

    ``threshold`` is the absolute linking magnitude the strap must keep; when
    cost bounds are known the harness replaces it by ``threshold_fraction``
    times the upper bound. The linking value is checked on every step of the
    window; ``link_check_every > 1`` checks only every n-th step (and the
    last), which is faster but can miss a slip that recovers between checks.
    """
    window_seconds: float = 2.0
    perturbation: float = 0.02
    threshold: float = 0.3
    threshold_fraction: float = 0.8
    link_check_every: int = 1
    contact_tolerance: float = 0.004


@dataclass(frozen=True)
class GridConfig:
    """Evaluation grid (one-factor-at-a-time around H1/M1/slack 0)."""
    hooks: Tuple[str, ...] = ("H1", "H2", "H3", "H4", "H5")
    materials: Tuple[str, ...] = ("M1", "M2", "M3")
    slack_levels: Tuple[float, ...] = (0.0, 0.03, 0.06)
    methods: Tuple[str, ...] = ("cart-mpc", "baseline-uncontrolled", "baseline-fixed")
    trials: int = 50
    workers: int = 1
    master_seed: int = 0


@dataclass(frozen=True)
class HarnessConfig:
    """All configuration sections."""
    scene: SceneConfig = field(default_factory=SceneConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    cameras: Tuple[CameraConfig, ...] = DEFAULT_CAMERAS
    keypoints: KeypointConfig = field(default_factory=KeypointConfig)
    data: DataConfig = field(default_factory=DataConfig)
    dynamics: DynamicsHyper = field(default_factory=DynamicsHyper)
    amortizer: AmortizerHyper = field(default_factory=AmortizerHyper)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    goal: GoalConfig = field(default_factory=GoalConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    hooks: Dict[str, HookPreset] = field(default_factory=lambda: dict(DEFAULT_HOOKS))
    materials: Dict[str, MaterialPreset] = field(default_factory=lambda: dict(DEFAULT_MATERIALS))

    def hook_preset(self, hook_id: str) -> HookPreset:
        """Return the preset for a hook id, raising ConfigurationError if unknown."""
        try:
            return self.hooks[str(hook_id)]
        except KeyError:
            raise ConfigurationError("Unknown hook id", config_key="hooks", config_value=hook_id)

    def material_preset(self, material_id: str) -> MaterialPreset:
        """Return the preset for a material id, raising ConfigurationError if unknown."""
        try:
            return self.materials[str(material_id)]
        except KeyError:
            raise ConfigurationError("Unknown material id", config_key="materials",
                                     config_value=material_id)

    def to_dict(self) -> Dict[str, Any]:
        """Return a JSON-ready nested dict."""
        return _to_jsonable(dataclasses.asdict(self))


_SECTION_TYPES = {
    "scene": SceneConfig,
    "sim": SimConfig,
    "keypoints": KeypointConfig,
    "data": DataConfig,
    "dynamics": DynamicsHyper,
    "amortizer": AmortizerHyper,
    "planner": PlannerConfig,
    "goal": GoalConfig,
    "grid": GridConfig,
}


def _to_jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_to_jsonable(v) for v in value]
    return value


def _coerce(section_type: type, key: str, value: Any) -> Any:
    """Convert JSON lists back to tuples for tuple-typed fields."""
    default = getattr(section_type(), key)
    if isinstance(default, tuple) and isinstance(value, list):
        return tuple(value)
    if isinstance(default, bool):
        return bool(value)
    if isinstance(default, float) and isinstance(value, int):
        return float(value)
    return value


def _build_section(name: str, values: Dict[str, Any], base: Any) -> Any:
    section_type = _SECTION_TYPES[name]
    known = {f.name for f in dataclasses.fields(section_type)}
    unknown = set(values) - known
    if unknown:
        raise ConfigurationError(f"Unknown keys in section '{name}'", config_key=name,
                                 config_value=sorted(unknown))
    coerced = {k: _coerce(section_type, k, v) for k, v in values.items()}
    try:
        return dataclasses.replace(base, **coerced)
    except (TypeError, ValueError) as e:
        raise ConfigurationError(f"Invalid values in section '{name}'", config_key=name, details=str(e))


def _build_entry(section: str, key: str, values: Any, entry_type: type) -> Any:
    """Build one hook, material or camera entry, reporting bad keys as configuration errors."""
    label = f"{section}.{key}"
    if not isinstance(values, dict):
        raise ConfigurationError(f"Entry '{label}' must be an object", config_key=label)
    fields = dataclasses.fields(entry_type)
    known = {f.name for f in fields}
    unknown = set(values) - known
    if unknown:
        raise ConfigurationError(f"Unknown keys in '{label}'", config_key=label, config_value=sorted(unknown))
    required = {f.name for f in fields
                if f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING}
    missing = required - set(values)
    if missing:
        raise ConfigurationError(f"Missing keys in '{label}'", config_key=label, config_value=sorted(missing))
    coerced = {k: (tuple(v) if isinstance(v, list) else v) for k, v in values.items()}
    try:
        return entry_type(**coerced)
    except (TypeError, ValueError) as e:
        raise ConfigurationError(f"Invalid values in '{label}'", config_key=label, details=str(e))


def config_from_dict(data: Dict[str, Any], base: Optional[HarnessConfig] = None) -> HarnessConfig:
    """
    Build a HarnessConfig from a nested dict layered over ``base`` (defaults).

    Args:
        data: Section name to field dict mapping
        base: Config to layer onto; defaults when omitted

    Returns:
        New HarnessConfig

    Raises:
        ConfigurationError: For unknown sections or keys and invalid values
    """
    cfg = base or HarnessConfig()
    updates: Dict[str, Any] = {}
    for name, values in data.items():
        if name in _SECTION_TYPES:
            if not isinstance(values, dict):
                raise ConfigurationError(f"Section '{name}' must be an object", config_key=name)
            updates[name] = _build_section(name, values, getattr(cfg, name))
        elif name == "cameras":
            if not isinstance(values, list):
                raise ConfigurationError("Section 'cameras' must be a list", config_key=name)
            updates["cameras"] = tuple(_build_entry(name, str(i), cam, CameraConfig)
                                       for i, cam in enumerate(values))
        elif name in ("hooks", "materials") and not isinstance(values, dict):
            raise ConfigurationError(f"Section '{name}' must be an object", config_key=name)
        elif name == "hooks":
            hooks = dict(cfg.hooks)
            hooks.update({k: _build_entry(name, k, v, HookPreset) for k, v in values.items()})
            updates["hooks"] = hooks
        elif name == "materials":
            materials = dict(cfg.materials)
            materials.update({k: _build_entry(name, k, v, MaterialPreset) for k, v in values.items()})
            updates["materials"] = materials
        else:
            raise ConfigurationError("Unknown config section", config_key=name)
    return dataclasses.replace(cfg, **updates)


def load_config(path: Optional[Path]) -> HarnessConfig:
    """
    Load a JSON config file; ``None`` returns the defaults.

    Args:
        path: Path to the config file

    Returns:
        HarnessConfig

    Raises:
        ConfigurationError: If the file cannot be read or parsed
    """
    if path is None:
        return HarnessConfig()
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigurationError("Cannot read config file", config_key=str(path), details=str(e))
    except json.JSONDecodeError as e:
        raise ConfigurationError("Config file is not valid JSON", config_key=str(path), details=str(e))
    if not isinstance(data, dict):
        raise ConfigurationError("Config file must hold a JSON object", config_key=str(path))
    return config_from_dict(data)


def apply_overrides(cfg: HarnessConfig, overrides: Iterable[str]) -> HarnessConfig:
    """
    Apply ``section.field=value`` overrides (value parsed as JSON, else string).

    Args:
        cfg: Base configuration
        overrides: Override strings

    Returns:
        New HarnessConfig
    """
    nested: Dict[str, Dict[str, Any]] = {}
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigurationError("Override must look like section.field=value", config_value=item)
        key, raw = item.split("=", 1)
        section, name = key.split(".", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        # hooks.H6={...} adds or replaces a whole preset
        nested.setdefault(section, {})[name] = value
    return config_from_dict(nested, base=cfg)


def config_hash(cfg: HarnessConfig) -> str:
    """Return the sha256 of the canonical JSON dump of ``cfg``."""
    canonical = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def output_root() -> Path:
    """Return the output root directory chosen by the environment."""
    return Path(os.environ.get(OUTPUT_ROOT_ENV, DEFAULT_OUTPUT_ROOT))
