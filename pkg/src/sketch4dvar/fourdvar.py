"""Strong-constraint 4D-Var: cost, gradient, GN Hessian factor and the
Gauss-Newton driver.

The cost is

    J(x0) = 1/2 ||x0 - xb||^2_{Gamma^-1} + 1/2 sum_i ||O(x_i) - y_i||^2_{R_i^-1}

with ``x_i`` the model state at the end of observation interval ``i``. The
GN Hessian is ``Gamma^{-1/2} (I + A^T A) Gamma^{-1/2}`` where ``A`` stacks
``R_i^{-1/2} O M_i Gamma^{1/2}``; steps are computed in the whitened
variable ``dx = Gamma^{1/2} dz`` either in closed form from a low-rank
sketch (SketchSolv) or by PCG with a sketch preconditioner.

Work is tallied in :class:`Counters`: "online" sweeps are inherently
sequential (gradients, line-search trials, PCG and Lanczos products),
"offline" sweeps are the independent sketch columns, and "probe" sweeps are
the randomized condition estimates used for adaptivity and reuse.
"""
from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from typing import List, Optional

import numpy as np

from .linalg import LinearMap, LowRankEVD, PCGReport, pcg_solve, woodbury_apply
from .linesearch import more_thuente
from .models.base import RK3Model, Trajectory
from .prior import PriorCovariance
from .sketching import SketchConfig, SketchReport, build_sketch, cond_estimate

logger = logging.getLogger(__name__)


class Mode(str, Enum):
    SKETCH_SOLV = "SketchSolv"
    SKETCH_PREC = "SketchPrec"
    SKETCH_PREC_A = "SketchPrecA"
    PREC_GAMMA = "PrecGamma"
    PREC_LANCZOS = "PrecLanczos"
    PREC_A_LANCZOS = "PrecALanczos"


@dataclass
class Counters:
    fwd: int = 0
    tlm: int = 0
    adj: int = 0
    offline_tlm: int = 0
    offline_adj: int = 0
    probe_tlm: int = 0
    probe_adj: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def add(self, name: str, k: int = 1):
        with self._lock:
            setattr(self, name, getattr(self, name) + int(k))

    def snapshot(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "_lock"}

    def reset(self):
        for k in self.snapshot():
            setattr(self, k, 0)


@dataclass
class AssimilationProblem:
    """Everything needed to evaluate the 4D-Var cost.

    ``obs_indices`` selects the observed state entries (the same at every
    time); ``observations[i]`` and ``obs_variances[i]`` belong to the end of
    interval ``i`` (``i = 0 .. n_t-1``). ``obs_variances`` may be a scalar,
    a length-``n_obs`` vector or an ``(n_t, n_obs)`` array.
    """

    model: RK3Model
    prior: PriorCovariance
    background: np.ndarray
    obs_indices: np.ndarray
    observations: np.ndarray
    obs_variances: np.ndarray
    steps_per_interval: int
    dt_obs: Optional[float] = None
    memory_budget: float = 512e6
    counters: Counters = field(default_factory=Counters)

    def __post_init__(self):
        self.background = np.asarray(self.background, dtype=float)
        self.obs_indices = np.asarray(self.obs_indices, dtype=int)
        self.observations = np.atleast_2d(np.asarray(self.observations, dtype=float))
        n = self.model.n
        idx = self.obs_indices
        if self.background.shape != (n,):
            raise ValueError(f"background must have length {n}")
        if self.prior.n != n:
            raise ValueError("prior dimension does not match the model")
        if idx.ndim != 1 or idx.size == 0 or idx.size > n:
            raise ValueError("need 1 <= n_obs <= n observation indices")
        if np.any(np.diff(idx) <= 0) or idx[0] < 0 or idx[-1] >= n:
            raise ValueError("observation indices must be strictly increasing and in range")
        if self.observations.shape[1] != idx.size:
            raise ValueError("observations must have shape (n_t, n_obs)")
        self.obs_variances = np.broadcast_to(
            np.asarray(self.obs_variances, dtype=float), self.observations.shape).copy()
        if np.any(self.obs_variances <= 0):
            raise ValueError("observation variances must be positive")
        if self.steps_per_interval < 1:
            raise ValueError("steps_per_interval must be positive")

    @property
    def n(self) -> int:
        return self.model.n

    @property
    def n_t(self) -> int:
        return self.observations.shape[0]

    @property
    def n_obs(self) -> int:
        return self.obs_indices.size

    @property
    def m(self) -> int:
        return self.n_t * self.n_obs

    def forward_states(self, x0) -> np.ndarray:
        """States at the end of each interval, shape ``(n_t, n)``."""
        out = np.empty((self.n_t, self.n))
        u = np.asarray(x0, dtype=float)
        for i in range(self.n_t):
            u = self.model.advance(u, self.steps_per_interval)
            out[i] = u
        return out

    def linearize(self, x0) -> Trajectory:
        return self.model.linearize(x0, self.n_t, self.steps_per_interval, self.memory_budget)

    def innovations(self, states) -> np.ndarray:
        """``O(x_i) - y_i`` for each time, shape ``(n_t, n_obs)``."""
        return states[:, self.obs_indices] - self.observations


def _cost_from_states(problem, x0, states) -> float:
    db = np.asarray(x0, dtype=float) - problem.background
    bg = problem.prior.apply_inv_sqrt(db)
    d = problem.innovations(states)
    return 0.5 * float(bg @ bg) + 0.5 * float(np.sum(d * d / problem.obs_variances))


def cost(problem: AssimilationProblem, x0) -> float:
    """4D-Var cost from one forward sweep (one FWD)."""
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (problem.n,):
        raise ValueError(f"x0 must have length {problem.n}")
    states = problem.forward_states(x0)
    problem.counters.add("fwd")
    return _cost_from_states(problem, x0, states)


@dataclass
class Evaluation:
    """Cost and gradient at a point, with the frozen trajectory for reuse."""
    x: np.ndarray
    cost: float
    grad: np.ndarray
    trajectory: Trajectory


def evaluate(problem: AssimilationProblem, x0) -> Evaluation:
    """Cost and gradient from one forward and one reverse sweep (1 FWD + 1 ADJ)."""
    x0 = np.array(x0, dtype=float)
    if x0.shape != (problem.n,):
        raise ValueError(f"x0 must have length {problem.n}")
    traj = problem.linearize(x0)
    problem.counters.add("fwd")
    states = traj.states[1:]
    J = _cost_from_states(problem, x0, states)
    forcing = np.zeros((problem.n_t, problem.n))
    forcing[:, problem.obs_indices] = problem.innovations(states) / problem.obs_variances
    g_obs = traj.adj(forcing)
    problem.counters.add("adj")
    g = problem.prior.apply_inv(x0 - problem.background) + g_obs
    return Evaluation(x0, J, g, traj)


def gradient(problem: AssimilationProblem, x0) -> np.ndarray:
    return evaluate(problem, x0).grad


def _ncols(v):
    return 1 if np.ndim(v) == 1 else v.shape[1]


def misfit_operator(problem: AssimilationProblem, x0=None, *, trajectory: Trajectory = None,
                    charge: str = "online", workers: int = 1) -> LinearMap:
    """``A = [R_i^{-1/2} O M_i Gamma^{1/2}]_i`` linearized at ``x0``.

    Rows are ordered time-major (all sensors at ``t_1``, then ``t_2``...).
    Each column applied costs one TLM (forward) or one ADJ (adjoint) sweep,
    charged to the ``charge`` counter family: ``online``, ``offline`` or
    ``probe``.
    """
    if trajectory is None:
        if x0 is None:
            raise ValueError("need x0 or a trajectory")
        trajectory = problem.linearize(x0)
        problem.counters.add("fwd")
    tlm_name, adj_name = {"online": ("tlm", "adj"), "offline": ("offline_tlm", "offline_adj"),
                          "probe": ("probe_tlm", "probe_adj")}[charge]
    idx = problem.obs_indices
    n_t, n_obs, n = problem.n_t, problem.n_obs, problem.n
    inv_sd = 1.0 / np.sqrt(problem.obs_variances)
    prior = problem.prior
    counters = problem.counters

    def apply(v):
        w = prior.apply_sqrt(v)
        tl = trajectory.tlm(w)[:, idx]  # (n_t, n_obs[, k])
        counters.add(tlm_name, _ncols(v))
        scale = inv_sd if tl.ndim == 2 else inv_sd[..., None]
        out = tl * scale
        return out.reshape((n_t * n_obs,) + out.shape[2:])

    def adjoint(y):
        y = y.reshape((n_t, n_obs) + y.shape[1:])
        scale = inv_sd if y.ndim == 2 else inv_sd[..., None]
        forcing = np.zeros((n_t, n) + y.shape[2:])
        forcing[:, idx] = y * scale
        lam = trajectory.adj(forcing)
        counters.add(adj_name, _ncols(lam))
        return prior.apply_sqrt(lam)

    return LinearMap((n_t * n_obs, n), apply, adjoint, workers=workers)


def shifted_operator(A: LinearMap) -> LinearMap:
    """``I + A^T A``, the prior-preconditioned GN Hessian."""
    def apply(x):
        return x + A.adjoint_apply(A.apply(x))
    return LinearMap((A.n_cols, A.n_cols), apply, symmetric=True)


def gn_step_sketchsolv(problem: AssimilationProblem, g, evd: LowRankEVD) -> np.ndarray:
    """Closed-form step ``-Gamma^{1/2} (I + H_hat)^{-1} Gamma^{1/2} g``."""
    prior = problem.prior
    return -prior.apply_sqrt(woodbury_apply(evd, prior.apply_sqrt(g)))


def gn_step_sketchprec(problem: AssimilationProblem, A: LinearMap, g, evd: Optional[LowRankEVD],
                       pcg_tol: float = 1e-9, max_iter: Optional[int] = None):
    """PCG on ``(I + A^T A) dz = -Gamma^{1/2} g``; returns ``(Gamma^{1/2} dz, report)``.

    ``evd=None`` runs plain CG (prior preconditioning only).
    """
    rhs = -problem.prior.apply_sqrt(g)
    precond = None if evd is None else (lambda r: woodbury_apply(evd, r))
    rep = pcg_solve(shifted_operator(A), rhs, precond, tol=pcg_tol, max_iter=max_iter)
    return problem.prior.apply_sqrt(rep.solution), rep


@dataclass
class GNConfig:
    mode: Mode = Mode.SKETCH_PREC
    sketch: SketchConfig = field(default_factory=SketchConfig)
    grad_tol: float = 1e-6
    pcg_tol: float = 1e-9
    max_gn_iters: int = 50
    pcg_max_iter: Optional[int] = None
    ls_ftol: float = 1e-4
    ls_gtol: float = 0.9
    ls_max_evals: int = 20

    def __post_init__(self):
        self.mode = Mode(self.mode)
        if not (0 < self.grad_tol < 1 and 0 < self.pcg_tol < 1):
            raise ValueError("grad_tol and pcg_tol must lie in (0, 1)")
        if self.max_gn_iters < 1:
            raise ValueError("max_gn_iters must be positive")
        if not (0 < self.ls_ftol < self.ls_gtol < 1):
            raise ValueError("need 0 < ls_ftol < ls_gtol < 1")


@dataclass
class GNIterationLog:
    k: int
    cost: float
    grad_inf_norm: float
    pcg_iterations: int
    pcg_converged: bool
    sketch_recomputed: bool
    final_l: int
    kappa_sk: float
    kappa_re: float
    step_size: float
    ls_evals: int
    counters: dict


@dataclass
class GNResult:
    x: np.ndarray
    logs: List[GNIterationLog]
    cost: float
    grad_inf_norm: float
    converged: bool
    counters: dict
    message: str = ""

    def __iter__(self):
        # allows ``xa, logs = gn_solve(...)``
        yield self.x
        yield self.logs

    @property
    def iterations(self) -> int:
        return len(self.logs)

    @property
    def total_pcg(self) -> int:
        return sum(l.pcg_iterations for l in self.logs)


def _iteration_seed(base: int, k: int) -> int:
    return int(np.random.SeedSequence([int(base), int(k)]).generate_state(1)[0])


class _Stepper:
    """Per-mode step computation, holding the reusable sketch for the adaptive modes."""

    def __init__(self, problem: AssimilationProblem, cfg: GNConfig):
        self.problem = problem
        self.cfg = cfg
        self.held: Optional[LowRankEVD] = None
        self.probe = np.random.default_rng([cfg.sketch.seed, 0x5EED, 1])

    def __call__(self, k: int, ev: Evaluation):
        p, cfg, mode = self.problem, self.cfg, self.cfg.mode
        sk = cfg.sketch.with_seed(_iteration_seed(cfg.sketch.seed, k))
        w = sk.workers
        A_on = misfit_operator(p, trajectory=ev.trajectory, charge="online")
        A_off = misfit_operator(p, trajectory=ev.trajectory, charge="offline", workers=w)
        H_probe = misfit_operator(p, trajectory=ev.trajectory, charge="probe").gram()
        info = dict(recomputed=False, l=0, kappa_sk=float("nan"), kappa_re=float("nan"))

        def record(rep: SketchReport):
            info.update(recomputed=True, l=rep.final_l, kappa_sk=rep.kappa)

        if mode == Mode.PREC_GAMMA:
            dx, rep = gn_step_sketchprec(p, A_on, ev.grad, None, cfg.pcg_tol, cfg.pcg_max_iter)
            return dx, rep, info
        if mode == Mode.SKETCH_SOLV:
            srep = build_sketch(A_off, sk)
            record(srep)
            return gn_step_sketchsolv(p, ev.grad, srep.evd), None, info
        if mode == Mode.SKETCH_PREC:
            srep = build_sketch(A_off, sk)
            record(srep)
            evd = srep.evd
        elif mode == Mode.PREC_LANCZOS:
            start = -p.prior.apply_sqrt(ev.grad)
            srep = build_sketch(A_on, replace(sk, method="lanczos"), start=start)
            record(srep)
            evd = srep.evd
        else:
            # adaptive modes: test the held sketch first
            lanczos = mode == Mode.PREC_A_LANCZOS
            if self.held is not None:
                info["kappa_re"] = cond_estimate(H_probe, self.held, self.probe)
            if self.held is None or not info["kappa_re"] < sk.eps_re:
                if lanczos:
                    start = -p.prior.apply_sqrt(ev.grad)
                    lcfg = replace(sk, method="lanczos")
                    srep = build_sketch(A_on, lcfg, adaptive=True, probe_op=H_probe, start=start)
                else:
                    srep = build_sketch(A_off, sk, adaptive=True, probe_op=H_probe)
                record(srep)
                self.held = srep.evd
            else:
                info["l"] = self.held.rank
            evd = self.held
        dx, rep = gn_step_sketchprec(p, A_on, ev.grad, evd, cfg.pcg_tol, cfg.pcg_max_iter)
        return dx, rep, info


def _line_search(problem, cfg, ev: Evaluation, dx):
    """Moré-Thuente along ``dx``; returns ``(Evaluation, step, n_evals, ok)``."""
    last = {}

    def phi(a):
        e = evaluate(problem, ev.x + a * dx)
        last["a"], last["ev"] = a, e
        return e.cost, float(e.grad @ dx)

    g0 = float(ev.grad @ dx)
    if not g0 < 0:
        logger.warning("GN direction is not a descent direction (slope %.3e)", g0)
        return ev, 0.0, 0, False
    res = more_thuente(phi, ev.cost, g0, 1.0, cfg.ls_ftol, cfg.ls_gtol, max_evals=cfg.ls_max_evals)
    if res.converged or res.value < ev.cost:
        new = last["ev"] if last.get("a") == res.step else evaluate(problem, ev.x + res.step * dx)
        if not res.converged:
            logger.warning("line search: %s; taking step %.3e", res.message, res.step)
        return new, res.step, res.n_evals, True
    logger.warning("line search failed (%s); trying the full step", res.message)
    new = last["ev"] if last.get("a") == 1.0 else evaluate(problem, ev.x + dx)
    return new, 1.0, res.n_evals + 1, new.cost < ev.cost


def gn_solve(problem: AssimilationProblem, config: GNConfig, x_init=None) -> GNResult:
    """Gauss-Newton from the background (or ``x_init``).

    Stops when ``||g_k||_inf / ||g_0||_inf < grad_tol``, after
    ``max_gn_iters`` steps, or when the line search cannot decrease the cost.
    Counters are reset at the start.
    """
    problem.counters.reset()
    x = problem.background if x_init is None else np.asarray(x_init, dtype=float)
    ev = evaluate(problem, x)
    g0 = float(np.max(np.abs(ev.grad)))
    step = _Stepper(problem, config)
    logs: List[GNIterationLog] = []
    converged, message = False, "maximum GN iterations reached"
    for k in range(config.max_gn_iters):
        gnorm = float(np.max(np.abs(ev.grad)))
        if g0 == 0 or gnorm / g0 < config.grad_tol:
            converged, message = True, "gradient tolerance met"
            break
        dx, pcg, info = step(k, ev)
        if pcg is not None and not pcg.converged:
            logger.warning("GN iteration %d: PCG did not converge; using its last iterate", k)
        new, a, n_ls, ok = _line_search(problem, config, ev, dx)
        logs.append(GNIterationLog(
            k=k, cost=ev.cost, grad_inf_norm=gnorm,
            pcg_iterations=0 if pcg is None else pcg.iterations,
            pcg_converged=True if pcg is None else pcg.converged,
            sketch_recomputed=info["recomputed"], final_l=info["l"],
            kappa_sk=info["kappa_sk"], kappa_re=info["kappa_re"],
            step_size=a, ls_evals=n_ls, counters=problem.counters.snapshot()))
        if not ok:
            message = "line search could not decrease the cost"
            logger.warning("GN stopped at iteration %d: %s", k, message)
            break
        ev = new
    else:
        gnorm = float(np.max(np.abs(ev.grad)))
        if g0 == 0 or gnorm / g0 < config.grad_tol:
            converged, message = True, "gradient tolerance met"
    return GNResult(ev.x, logs, ev.cost, float(np.max(np.abs(ev.grad))), converged,
                    problem.counters.snapshot(), message)
