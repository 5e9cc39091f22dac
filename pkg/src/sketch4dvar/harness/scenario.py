"""Truth, background and observations for the Burgers and BVE experiments.

Random streams are derived from the master seed with fixed tags so each
quantity can be regenerated independently of the others.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np

from ..fourdvar import AssimilationProblem
from ..models.burgers import BurgersModel
from ..models.bve import BVEModel
from ..prior import PriorCovariance, sample_background
from .config import ExperimentConfig

# stream tags under the master seed
BACKGROUND, NOISE, SKETCH, SPIN_UP = 1, 2, 3, 4
# bump when the BVE truth generation changes
BVE_FIXTURE_VERSION = 1


def stream(seed: int, tag: int) -> list:
    return [int(seed), int(tag)]


def sketch_seed(cfg: ExperimentConfig) -> int:
    return int(np.random.SeedSequence(stream(cfg.seed, SKETCH)).generate_state(1)[0])


@dataclass
class Scenario:
    config: ExperimentConfig
    problem: AssimilationProblem
    truth: np.ndarray
    background: np.ndarray

    def trajectory(self, x0, n_intervals=None) -> np.ndarray:
        """``x0`` followed by the states at the end of each interval."""
        n_intervals = self.config.n_forecast if n_intervals is None else n_intervals
        model, steps = self.problem.model, self.problem.steps_per_interval
        out = [np.asarray(x0, dtype=float)]
        for _ in range(n_intervals):
            out.append(model.advance(out[-1], steps))
        return np.array(out)


# -- Burgers ----------------------------------------------------------------

def burgers_steps(cfg: ExperimentConfig, n: int, nu: float) -> int:
    """RK3 steps per observation interval; automatic when not configured.

    The automatic rule is the model's CFL heuristic with ``max|u| = 1.5``,
    a safe bound for backgrounds drawn around ``sin(pi x)``.
    """
    if cfg.steps_per_interval is not None:
        return int(cfg.steps_per_interval)
    dt = BurgersModel(n, nu, 1.0).stable_dt(1.5)
    return max(1, math.ceil(cfg.dt_obs / dt - 1e-9))


def burgers_prior(cfg: ExperimentConfig, n: int) -> PriorCovariance:
    spacing = 1.0 if cfg.prior_reference_n is None else (cfg.prior_reference_n + 1) / (n + 1)
    return PriorCovariance(cfg.alpha, cfg.beta, n, spacing=spacing)


def burgers_sensor_indices(n: int, n_obs: int) -> np.ndarray:
    """Sensors at ``x = j/(n_obs+1)``, snapped to the nearest interior point."""
    x = np.arange(1, n_obs + 1) / (n_obs + 1)
    idx = np.clip(np.rint(x * (n + 1)).astype(int) - 1, 0, n - 1)
    if np.any(np.diff(idx) <= 0):
        raise ValueError(f"grid n={n} too coarse for {n_obs} distinct sensors")
    return idx


def _interp_dirichlet(values, n_to):
    n_from = values.size
    x_from = np.linspace(0.0, 1.0, n_from + 2)
    x_to = np.linspace(0.0, 1.0, n_to + 2)[1:-1]
    return np.interp(x_to, x_from, np.concatenate([[0.0], values, [0.0]]))


def _burgers_observations(cfg, model, truth, idx, steps):
    rng = np.random.default_rng(stream(cfg.seed, NOISE))
    obs = np.empty((cfg.n_t, idx.size))
    u = truth
    for i in range(cfg.n_t):
        u = model.advance(u, steps)
        obs[i] = u[idx]
    noise = rng.standard_normal(obs.shape) * math.sqrt(cfg.obs_variance)
    return obs + cfg.noise_scale * noise


def burgers_scenario(cfg: ExperimentConfig) -> Scenario:
    n, nu = cfg.n, cfg.nu
    steps = burgers_steps(cfg, n, nu)
    model = BurgersModel(n, nu, cfg.dt_obs / steps)
    prior = burgers_prior(cfg, n)
    truth = np.sin(np.pi * model.grid)
    idx = burgers_sensor_indices(n, cfg.n_obs)
    if cfg.task == "conditioning" and cfg.reference_n != n:
        # background and data are generated once on the reference grid
        ref = cfg.replace(n=cfg.reference_n, task="assimilate")
        ref_sc = burgers_scenario(ref)
        background = _interp_dirichlet(ref_sc.background, n)
        observations = ref_sc.problem.observations
    else:
        background = sample_background(prior, truth, stream(cfg.seed, BACKGROUND))
        observations = _burgers_observations(cfg, model, truth, idx, steps)
    model.check_cfl(background)
    problem = AssimilationProblem(model, prior, background, idx, observations,
                                  cfg.obs_variance, steps, dt_obs=cfg.dt_obs)
    return Scenario(cfg, problem, truth, background)


# -- BVE --------------------------------------------------------------------

def bve_sensor_indices(nx: int, ny: int, sx: int, sy: int) -> np.ndarray:
    """An equispaced ``sx x sy`` sensor lattice, flat indices (x fastest)."""
    ix = np.rint(np.arange(1, sx + 1) * (nx + 1) / (sx + 1)).astype(int) - 1
    iy = np.rint(np.arange(1, sy + 1) * (ny + 1) / (sy + 1)).astype(int) - 1
    return np.sort((iy[:, None] * nx + ix[None, :]).ravel())


@functools.lru_cache(maxsize=4)
def _bve_truth(nx, ny, Re, Ro, t_end, dt, seed, version):
    model = BVEModel(nx, ny, dt, Re, Ro)
    truth = model.spin_up(seed=seed, t_end=t_end, dt=dt)
    truth.setflags(write=False)
    return truth


def bve_truth(cfg: ExperimentConfig) -> np.ndarray:
    seed = int(np.random.SeedSequence(stream(cfg.seed, SPIN_UP)).generate_state(1)[0])
    return np.array(_bve_truth(cfg.nx, cfg.ny, cfg.Re, cfg.Ro, cfg.spin_up_time,
                               cfg.spin_up_dt, seed, BVE_FIXTURE_VERSION))


def bve_scenario(cfg: ExperimentConfig) -> Scenario:
    steps = int(cfg.steps_per_interval)
    model = BVEModel(cfg.nx, cfg.ny, cfg.dt_obs / steps, cfg.Re, cfg.Ro)
    prior = PriorCovariance(cfg.alpha, cfg.beta, (cfg.nx, cfg.ny))
    truth = bve_truth(cfg)
    background = sample_background(prior, truth, stream(cfg.seed, BACKGROUND))
    idx = bve_sensor_indices(cfg.nx, cfg.ny, *cfg.sensor_grid)
    rng = np.random.default_rng(stream(cfg.seed, NOISE))
    obs = np.empty((cfg.n_t, idx.size))
    u = truth
    for i in range(cfg.n_t):
        u = model.advance(u, steps)
        obs[i] = u[idx]
    obs += cfg.noise_scale * math.sqrt(cfg.obs_variance) * rng.standard_normal(obs.shape)
    problem = AssimilationProblem(model, prior, background, idx, obs, cfg.obs_variance, steps,
                                  dt_obs=cfg.dt_obs)
    return Scenario(cfg, problem, truth, background)


def generate_scenario(cfg: ExperimentConfig) -> Scenario:
    cfg.validate()
    return burgers_scenario(cfg) if cfg.model == "burgers" else bve_scenario(cfg)
