"""Experiment configuration: JSON spec files, presets and (de)serialization.

One declarative file drives every subcommand. Sections mirror the runtime
dataclasses (world / ppo / ga / adapt / experiment); unknown keys are
rejected so typos fail loudly.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .envsim import DEFAULT_GOALS, DEFAULT_HAZARDS, WorldConfig
from .errors import ConfigError
from .metaevo import GaConfig
from .rlcore import PpoConfig

CONFIG_FORMAT_VERSION = 1

MODES = (
    "meta_train",
    "adapt_test",
    "baseline_pure_rl",
    "baseline_no_instinct",
    "ablate_instinct_off",
    "ablate_random_policy",
    "plot",
)

SCALE_DESK = "desk"
SCALE_FULL = "full"


@dataclass(frozen=True)
class AdaptSpec:
    """Protocol for lifetime-adaptation tests and their report tables."""

    rollout_budget: int = 4000
    repetition_cycles: int = 5  # cycles x goals = repetitions
    base_seed: int = 0
    pure_rl_lr: float = 0.01
    pure_rl_sigma: float = 0.05

    def __post_init__(self):
        if self.rollout_budget < 1:
            raise ConfigError("adapt rollout_budget must be >= 1")
        if self.repetition_cycles < 1:
            raise ConfigError("repetition_cycles must be >= 1")


@dataclass
class ExperimentSpec:
    """Everything one subcommand run needs, as parsed from a config file."""

    mode: str = "meta_train"
    seeds: tuple = (0,)
    out_dir: str | None = None
    scale: str = SCALE_DESK
    world: WorldConfig = field(default_factory=WorldConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    ga: GaConfig = field(default_factory=GaConfig)
    adapt: AdaptSpec = field(default_factory=AdaptSpec)
    workers: int | None = None
    ga_explicit: tuple = ()  # ga keys set explicitly in the file; win over presets

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if len(self.seeds) == 0:
            raise ConfigError("seeds must be non-empty")


def desk_ga(**overrides) -> GaConfig:
    base = dict(population_size=48, generations=100)
    base.update(overrides)
    return GaConfig(**base)


def full_ga(**overrides) -> GaConfig:
    base = dict(population_size=480, generations=250)
    base.update(overrides)
    return GaConfig(**base)


def hazard_world(**overrides) -> WorldConfig:
    return WorldConfig(**overrides)


def no_hazard_world(**overrides) -> WorldConfig:
    overrides.setdefault("hazard_zones", ())
    return WorldConfig(**overrides)


def _build_dataclass(cls, data: dict, section: str):
    allowed = {f.name for f in fields(cls)}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in '{section}' section: {sorted(unknown)}")
    try:
        return cls(**data)
    except TypeError as e:
        raise ConfigError(f"bad '{section}' section: {e}") from e


def world_from_dict(data: dict) -> WorldConfig:
    data = dict(data)
    if "goals" in data:
        data["goals"] = tuple(tuple(g) for g in data["goals"])
    if "hazard_zones" in data:
        data["hazard_zones"] = tuple(tuple(r) for r in data["hazard_zones"])
    if "position_bounds" in data:
        data["position_bounds"] = tuple(data["position_bounds"])
    return _build_dataclass(WorldConfig, data, "world")


def spec_from_dict(data: dict) -> ExperimentSpec:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    version = data.get("format_version")
    if version != CONFIG_FORMAT_VERSION:
        raise ConfigError(f"unsupported config format_version {version!r}")
    known = {"format_version", "world", "ppo", "ga", "adapt", "experiment"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown top-level sections: {sorted(unknown)}")

    world = world_from_dict(data.get("world", {}))
    ppo = _build_dataclass(PpoConfig, data.get("ppo", {}), "ppo")
    ga_raw = data.get("ga", {})
    ga = _build_dataclass(GaConfig, ga_raw, "ga")
    adapt = _build_dataclass(AdaptSpec, data.get("adapt", {}), "adapt")

    exp = dict(data.get("experiment", {}))
    if "seeds" in exp:
        exp["seeds"] = tuple(int(s) for s in exp["seeds"])
    allowed = {"mode", "seeds", "out_dir", "scale", "workers"}
    unknown = set(exp) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in 'experiment' section: {sorted(unknown)}")
    return ExperimentSpec(
        world=world, ppo=ppo, ga=ga, adapt=adapt, ga_explicit=tuple(sorted(ga_raw)), **exp
    )


def spec_to_dict(spec: ExperimentSpec) -> dict:
    return {
        "format_version": CONFIG_FORMAT_VERSION,
        "world": {
            "goals": [list(g) for g in spec.world.goals],
            "goal_radius": spec.world.goal_radius,
            "horizon": spec.world.horizon,
            "hazard_zones": [list(r) for r in spec.world.hazard_zones],
            "hazard_penalty": spec.world.hazard_penalty,
            "rangefinder_count": spec.world.rangefinder_count,
            "rangefinder_range": spec.world.rangefinder_range,
            "position_bounds": list(spec.world.position_bounds),
            "action_bound": spec.world.action_bound,
        },
        "ppo": asdict(spec.ppo),
        "ga": asdict(spec.ga),
        "adapt": asdict(spec.adapt),
        "experiment": {
            "mode": spec.mode,
            "seeds": list(spec.seeds),
            "out_dir": spec.out_dir,
            "scale": spec.scale,
            "workers": spec.workers,
        },
    }


def load_config(path) -> ExperimentSpec:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON: {e}") from e
    return spec_from_dict(data)


def save_config(spec: ExperimentSpec, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(spec_to_dict(spec), indent=2, sort_keys=True) + "\n")


def apply_scale(spec: ExperimentSpec) -> ExperimentSpec:
    """Resize the GA section for the requested scale.

    GA keys set explicitly in the config file keep their values; the preset
    only fills population_size/generations when the file left them default.
    """
    presets = {SCALE_DESK: dict(population_size=48, generations=100),
               SCALE_FULL: dict(population_size=480, generations=250)}
    if spec.scale not in presets:
        raise ConfigError(f"unknown scale {spec.scale!r}")
    updates = {k: v for k, v in presets[spec.scale].items() if k not in spec.ga_explicit}
    return replace(spec, ga=replace(spec.ga, **updates)) if updates else spec
