"""Run configuration: dataclasses, strict YAML loading, canonical hashing."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import get_args, get_origin, get_type_hints

import yaml

FORMAT_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass
class IdmParams:
    """Intelligent Driver Model parameters for one vehicle class."""

    a_max: float = 0.15          # max acceleration, units/s^2
    b_comfort: float = 0.30      # comfortable deceleration (positive), units/s^2
    v0: float = 0.45             # fallback desired speed; overridden by spawn speed
    s_min: float = 0.01          # jam distance, units
    t_headway: float = 0.3       # desired time headway, s
    delta: float = 4.0           # free-flow exponent
    b_hard_ratio: float = 3.0    # hard-braking clamp as multiple of a_max


@dataclass
class WorldConfig:
    """Four-way intersection world: geometry, kinematics, policy, noise."""

    lane_width: float = 0.04
    vehicle_length: float = 0.05
    vehicle_width: float = 0.02
    policy_dt: float = 0.125
    substeps: int = 2
    horizon_steps: int = 24      # recorded states; actions = horizon_steps - 1
    approach_length: float = 1.2
    exit_length: float = 1.2
    idm_ego: IdmParams = field(default_factory=IdmParams)
    idm_intruder: IdmParams = field(default_factory=IdmParams)
    intruder_delta_range: tuple[float, float] = (2.0, 8.0)
    noise_scale: float = 6.666666666666667   # gamma, variance of each error channel

    # initial-state sampling intervals (distance to intersection box, speed)
    ego_distance_range: tuple[float, float] = (0.35, 0.65)
    ego_speed_range: tuple[float, float] = (0.35, 0.5)
    intruder_distance_range: tuple[float, float] = (0.25, 0.45)
    intruder_speed_range: tuple[float, float] = (0.35, 0.45)

    # ego yield policy
    conflict_lateral_tol: float = 0.02    # in-path leader if observed within this lateral offset
    conflict_standoff: float = 0.03       # stop target this far before the intersection box entry
    conflict_box_margin: float = 0.03     # box expansion when predicting intruder occupancy
    conflict_time_margin: float = 0.3     # temporal buffer around predicted occupancy, s
    conflict_speed_floor: float = 1e-3    # floor on speeds when converting gaps to times
    min_spawn_distance: float = 0.01      # floor when reconstructing world from relative state
    min_same_lane_gap: float = 0.1        # same-branch spawns keep at least this center gap

    def __post_init__(self):
        if self.lane_width <= 0:
            raise ConfigError("lane_width must be positive")
        if self.horizon_steps < 2:
            raise ConfigError("horizon_steps must be at least 2")
        for p in (self.idm_ego, self.idm_intruder):
            for name in ("a_max", "b_comfort", "v0", "s_min", "t_headway", "delta"):
                if getattr(p, name) <= 0:
                    raise ConfigError(f"IDM parameter {name} must be positive")
        if self.noise_scale <= 0:
            raise ConfigError("noise_scale must be positive")


@dataclass
class DiffusionConfig:
    """Denoiser architecture and variance schedule."""

    steps_k: int = 200
    beta_start: float = 1e-4
    beta_end: float = 0.035
    base_width: int = 16         # stage widths are base_width * (1, 2, 4, 8)
    cond_dim: int = 64
    time_embed_dim: int = 32

    def __post_init__(self):
        if not (0.0 < self.beta_start < self.beta_end < 1.0):
            raise ConfigError("need 0 < beta_start < beta_end < 1")
        if self.steps_k < 2:
            raise ConfigError("steps_k must be at least 2")


@dataclass
class TrainerConfig:
    """Multi-stage elite training loop."""

    alpha: float = 0.1           # elite quantile
    batch_n: int = 256           # simulations per stage and SGD minibatch size
    max_stages: int = 40
    convergence_tol: float = 1e-3
    epochs_per_stage: int = 50
    lr: float = 3e-4
    weight_decay: float = 1e-2

    def __post_init__(self):
        if not (0.0 < self.alpha < 1.0):
            raise ConfigError("alpha must be in (0, 1)")
        if self.batch_n < 1:
            raise ConfigError("batch_n must be >= 1")


@dataclass
class CemConfig:
    """Cross-entropy baseline over the flattened noise sequence."""

    alpha: float = 0.1
    batch_n: int = 256
    max_stages: int = 40
    convergence_tol: float = 1e-3
    smoothing: float = 0.7       # new = smoothing * refit + (1 - smoothing) * previous
    var_floor_ratio: float = 1e-4  # variance floor as fraction of prior noise_scale


@dataclass
class MetricsConfig:
    k: int = 5


@dataclass
class RunConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    cem: CemConfig = field(default_factory=CemConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)


def _build(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping, got {type(data).__name__}")
    hints = get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"{path or 'config'}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        hint = hints[name]
        if dataclasses.is_dataclass(hint):
            kwargs[name] = _build(hint, value, f"{path}.{name}" if path else name)
        elif get_origin(hint) is tuple:
            n = len(get_args(hint))
            if not isinstance(value, (list, tuple)) or len(value) != n:
                raise ConfigError(f"{path}.{name}: expected {n} values")
            kwargs[name] = tuple(float(v) for v in value)
        else:
            kwargs[name] = hint(value)
    return cls(**kwargs)


def config_from_dict(data: dict) -> RunConfig:
    """Build a RunConfig from a nested dict, rejecting unknown keys."""
    return _build(RunConfig, data or {}, "")


def load_config(path: str | Path | None) -> RunConfig:
    """Load YAML config; missing path or empty file means all defaults."""
    if path is None:
        return RunConfig()
    with open(path) as f:
        data = yaml.safe_load(f)
    return config_from_dict(data or {})


def config_to_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)


def canonical_json(cfg: RunConfig) -> str:
    return json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":"))


def config_hash(cfg: RunConfig) -> str:
    """Stable 16-hex-digit digest of the canonical serialization."""
    return hashlib.sha256(canonical_json(cfg).encode()).hexdigest()[:16]


def save_config(cfg: RunConfig, path: str | Path) -> None:
    with open(path, "w") as f:
        yaml.safe_dump(config_to_dict(cfg), f, sort_keys=False)
