"""Experiment configuration and named presets.

A config file is YAML (or JSON, which YAML reads too) holding a flat
mapping of :class:`ExperimentConfig` fields plus an optional ``preset`` key
naming the defaults to start from. ``sketch`` may be given as a nested
mapping of :class:`~sketch4dvar.sketching.SketchConfig` fields.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import yaml

from ..fourdvar import Mode
from ..sketching import METHODS, SketchConfig


class ConfigError(ValueError):
    """Inconsistent or unknown configuration."""


TASKS = ("assimilate", "sketch_size", "conditioning")


@dataclass
class ExperimentConfig:
    experiment: str = "burgers_1_1"
    model: str = "burgers"
    task: str = "assimilate"
    # Burgers
    n: int = 399
    nu: float = 0.1
    # when set, the prior stencil is rescaled so the prior is the same
    # continuous operator on every grid, matching the raw stencil at this n
    prior_reference_n: Optional[int] = None
    # BVE
    nx: int = 64
    ny: int = 129
    Re: float = 200.0
    Ro: float = 0.0016
    spin_up_time: float = 0.25
    spin_up_dt: float = 1e-4
    sensor_grid: Tuple[int, int] = (16, 16)
    # window
    dt_obs: float = 0.01
    steps_per_interval: Optional[int] = 400
    n_t: int = 20
    n_forecast: int = 81
    n_obs: int = 15
    # prior and noise
    alpha: float = 0.5
    beta: float = 500.0
    obs_variance: float = 0.01
    noise_scale: float = 1.0
    # solver
    mode: str = "SketchPrec"
    sketch: SketchConfig = field(default_factory=lambda: SketchConfig(method="randsvd", l=15))
    grad_tol: float = 1e-6
    pcg_tol: float = 1e-9
    max_gn_iters: int = 50
    # sweeps over the first iterate
    sketch_sizes: List[int] = field(default_factory=lambda: [5, 10, 15, 20, 25])
    sweep_methods: List[str] = field(default_factory=lambda: ["randsvd", "nystrom", "singleview", "lanczos"])
    sweep_seeds: int = 5
    reference_n: int = 799
    spectrum_rank: int = 60
    seed: int = 0
    out: str = "results"

    def __post_init__(self):
        if isinstance(self.sketch, dict):
            self.sketch = SketchConfig(**self.sketch)
        self.sensor_grid = tuple(int(v) for v in self.sensor_grid)
        self.validate()

    def validate(self):
        if self.model not in ("burgers", "bve"):
            raise ConfigError(f"unknown model {self.model!r}")
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}; expected one of {TASKS}")
        try:
            Mode(self.mode)
        except ValueError:
            raise ConfigError(f"unknown solver mode {self.mode!r}") from None
        if self.sketch.method not in METHODS:
            raise ConfigError(f"unknown sketch method {self.sketch.method!r}")
        if self.n_t < 1 or self.n_forecast < self.n_t:
            raise ConfigError("need 1 <= n_t <= n_forecast")
        if self.dt_obs <= 0 or (self.steps_per_interval is not None and self.steps_per_interval < 1):
            raise ConfigError("dt_obs and steps_per_interval must be positive")
        if self.obs_variance <= 0:
            raise ConfigError("obs_variance must be positive (use noise_scale = 0 for exact data)")
        if self.noise_scale < 0:
            raise ConfigError("noise_scale must be nonnegative")
        if self.alpha < 0 or self.beta < 0 or self.alpha == self.beta == 0:
            raise ConfigError("prior needs alpha, beta >= 0, not both zero")
        if not (0 < self.grad_tol < 1 and 0 < self.pcg_tol < 1):
            raise ConfigError("tolerances must lie in (0, 1)")
        if self.model == "burgers":
            if self.n < 2 or not (1 <= self.n_obs <= self.n):
                raise ConfigError("Burgers needs n >= 2 and 1 <= n_obs <= n")
            if self.nu <= 0:
                raise ConfigError("nu must be positive")
            if self.prior_reference_n is not None and self.prior_reference_n < 1:
                raise ConfigError("prior_reference_n must be positive")
        else:
            sx, sy = self.sensor_grid
            if self.nx < 2 or self.ny < 2 or not (1 <= sx <= self.nx and 1 <= sy <= self.ny):
                raise ConfigError("BVE sensor grid must fit inside the model grid")
            if self.steps_per_interval is None:
                raise ConfigError("BVE needs an explicit steps_per_interval")
        if any(l < 1 for l in self.sketch_sizes):
            raise ConfigError("sketch sizes must be positive")
        bad = [m for m in self.sweep_methods if m not in METHODS]
        if bad:
            raise ConfigError(f"unknown sweep methods {bad}")

    @property
    def state_size(self) -> int:
        return self.n if self.model == "burgers" else self.nx * self.ny

    @property
    def sensors(self) -> int:
        return self.n_obs if self.model == "burgers" else self.sensor_grid[0] * self.sensor_grid[1]

    def replace(self, **changes) -> "ExperimentConfig":
        if "sketch" in changes and isinstance(changes["sketch"], dict):
            changes["sketch"] = dataclasses.replace(self.sketch, **changes["sketch"])
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> Dict[str, Any]:
        d = dataclasses.asdict(self)
        d["sensor_grid"] = list(self.sensor_grid)
        return d


def _burgers(**kw) -> ExperimentConfig:
    return ExperimentConfig(**kw)


def _bve(**kw) -> ExperimentConfig:
    base = dict(model="bve", experiment="bve_2", nx=64, ny=129, dt_obs=0.001225,
                steps_per_interval=3, n_t=8, n_forecast=8, alpha=0.0, beta=0.06,
                obs_variance=361.0, mode="SketchPrec",
                sketch=SketchConfig(method="randsvd", l=192, l_inc=48, eps_sk=1.01, eps_re=10.0),
                max_gn_iters=20)
    base.update(kw)
    return ExperimentConfig(**base)


PRESETS = {
    "burgers_1_1": lambda: _burgers(experiment="burgers_1_1"),
    "burgers_1_2": lambda: _burgers(experiment="burgers_1_2", task="sketch_size"),
    "burgers_1_3": lambda: _burgers(experiment="burgers_1_3", task="conditioning",
                                    steps_per_interval=None, sketch_sizes=[15], prior_reference_n=399),
    "burgers_1_4": lambda: _burgers(experiment="burgers_1_4", task="conditioning",
                                    steps_per_interval=None, sketch_sizes=[15], prior_reference_n=399),
    "bve_2": lambda: _bve(),
    "bve_2_full": lambda: _bve(experiment="bve_2_full", nx=128, ny=257, steps_per_interval=5,
                               spin_up_dt=5e-5,
                               sketch=SketchConfig(method="randsvd", l=384, l_inc=64)),
}


def preset(name: str) -> ExperimentConfig:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; available: {sorted(PRESETS)}") from None


def from_mapping(data: Dict[str, Any], base: Optional[ExperimentConfig] = None) -> ExperimentConfig:
    data = dict(data or {})
    name = data.pop("preset", None)
    cfg = preset(name) if name else (base or ExperimentConfig())
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    try:
        return cfg.replace(**data)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path, base: Optional[ExperimentConfig] = None) -> ExperimentConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if data is not None and not isinstance(data, dict):
        raise ConfigError("config file must hold a mapping")
    return from_mapping(data or {}, base)
