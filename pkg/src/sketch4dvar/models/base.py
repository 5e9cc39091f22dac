"""Shared machinery for explicit RK3-TVD models and their discrete derivatives.

A model advances a state with the Shu-Osher form of the third-order TVD
Runge-Kutta scheme::

    u1 = u + dt f(u)
    u2 = 3/4 u + 1/4 (u1 + dt f(u1))
    u+ = 1/3 u + 2/3 (u2 + dt f(u2))

The tangent linear model differentiates each stage exactly; the adjoint runs
the stages in reverse with the transposed stage Jacobians, so the pair passes
the dot-product test to round-off.

Subclasses provide ``rhs``, ``rhs_tlm`` and ``rhs_adj``, or override the
interval kernels (``store_interval``, ``tlm_interval``, ``adj_interval``)
wholesale for speed.
"""
from __future__ import annotations

import numpy as np


class ModelInstabilityError(FloatingPointError):
    """The forward integration produced NaN or Inf."""


def _check_state(u, where):
    if not np.all(np.isfinite(u)):
        raise ModelInstabilityError(f"non-finite values in {where}; time step likely unstable")


class RK3Model:
    n: int
    dt: float

    # -- to be provided by subclasses -------------------------------------
    def rhs(self, u):
        raise NotImplementedError

    def rhs_tlm(self, cache, du):
        raise NotImplementedError

    def rhs_adj(self, cache, lam):
        raise NotImplementedError

    def stage_cache(self, u):
        """Whatever ``rhs_tlm``/``rhs_adj`` need about the base state."""
        return u

    # -- nonlinear stepping -----------------------------------------------
    def step(self, u):
        dt = self.dt
        u1 = u + dt * self.rhs(u)
        u2 = 0.75 * u + 0.25 * (u1 + dt * self.rhs(u1))
        return u / 3.0 + 2.0 / 3.0 * (u2 + dt * self.rhs(u2))

    def _validate(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[0] != self.n:
            raise ValueError(f"state of length {x.shape[0]} does not match model size {self.n}")
        return x

    def advance(self, u, steps: int):
        u = np.array(u, dtype=float)
        for _ in range(steps):
            u = self.step(u)
        _check_state(u, "forward integration")
        return u

    def forward(self, x0, steps: int):
        """State after ``steps`` RK3 steps."""
        return self.advance(self._validate(x0), steps)

    # -- interval kernels used by Trajectory --------------------------------
    def store_interval(self, u, steps: int):
        """Integrate ``steps`` steps, keeping per-stage linearization data."""
        dt = self.dt
        stages = []
        u = np.array(u, dtype=float)
        for _ in range(steps):
            c0 = self.stage_cache(u)
            u1 = u + dt * self._rhs_from_cache(c0, u)
            c1 = self.stage_cache(u1)
            u2 = 0.75 * u + 0.25 * (u1 + dt * self._rhs_from_cache(c1, u1))
            c2 = self.stage_cache(u2)
            u = u / 3.0 + 2.0 / 3.0 * (u2 + dt * self._rhs_from_cache(c2, u2))
            stages.append((c0, c1, c2))
        _check_state(u, "forward integration")
        return stages, u

    def _rhs_from_cache(self, cache, u):
        return self.rhs(u)

    def tlm_interval(self, stages, du):
        dt = self.dt
        for c0, c1, c2 in stages:
            du1 = du + dt * self.rhs_tlm(c0, du)
            du2 = 0.75 * du + 0.25 * (du1 + dt * self.rhs_tlm(c1, du1))
            du = du / 3.0 + 2.0 / 3.0 * (du2 + dt * self.rhs_tlm(c2, du2))
        return du

    def adj_interval(self, stages, lam):
        dt = self.dt
        for c0, c1, c2 in reversed(stages):
            l2 = 2.0 / 3.0 * (lam + dt * self.rhs_adj(c2, lam))
            lu = lam / 3.0 + 0.75 * l2
            l1 = 0.25 * (l2 + dt * self.rhs_adj(c1, l2))
            lam = lu + l1 + dt * self.rhs_adj(c0, l1)
        return lam

    # -- convenience wrappers ---------------------------------------------
    def linearize(self, x0, n_intervals: int, steps_per_interval: int,
                  memory_budget: float = 256e6) -> "Trajectory":
        return Trajectory(self, self._validate(x0), n_intervals, steps_per_interval, memory_budget)

    def tlm_apply(self, x0, dx, steps: int):
        """Jacobian of ``forward(., steps)`` at ``x0`` applied to ``dx``."""
        traj = self.linearize(x0, 1, steps)
        return traj.tlm(self._validate(dx))[-1]

    def adj_apply(self, x0, lam, steps: int):
        """Transpose of :meth:`tlm_apply` applied to ``lam``."""
        traj = self.linearize(x0, 1, steps)
        lam = self._validate(lam)
        return traj.adj(lam[None, ...])


class Trajectory:
    """A nonlinear trajectory frozen for repeated TLM/ADJ sweeps.

    ``states[i]`` is the state after ``i`` intervals. Stage data are kept in
    memory when they fit ``memory_budget`` bytes and are recomputed interval
    by interval otherwise.
    """

    def __init__(self, model: RK3Model, x0, n_intervals: int, steps_per_interval: int,
                 memory_budget: float = 256e6):
        self.model = model
        self.n_intervals = n_intervals
        self.steps = steps_per_interval
        states = [np.array(x0, dtype=float)]
        per_interval = self._interval_bytes(model, steps_per_interval)
        self.cached = per_interval * n_intervals <= memory_budget
        self._stages = [] if self.cached else None
        u = states[0]
        for _ in range(n_intervals):
            if self.cached:
                stages, u = model.store_interval(u, steps_per_interval)
                self._stages.append(stages)
            else:
                u = model.advance(u, steps_per_interval)
            states.append(u)
        self.states = np.array(states)

    @staticmethod
    def _interval_bytes(model, steps):
        factor = getattr(model, "stage_bytes_factor", 1)
        return 3 * steps * model.n * 8 * factor

    def _interval_stages(self, i):
        if self.cached:
            return self._stages[i]
        stages, _ = self.model.store_interval(self.states[i], self.steps)
        return stages

    def tlm(self, dx):
        """Tangent states at the end of every interval, shape ``(n_intervals, *dx.shape)``."""
        out = np.empty((self.n_intervals,) + np.shape(dx))
        du = np.array(dx, dtype=float)
        for i in range(self.n_intervals):
            du = self.model.tlm_interval(self._interval_stages(i), du)
            out[i] = du
        return out

    def adj(self, forcing):
        """One reverse sweep with adjoint sources injected at interval ends.

        ``forcing[i]`` is added at the end of interval ``i``; returns the
        sensitivity with respect to the initial state.
        """
        forcing = np.asarray(forcing, dtype=float)
        if forcing.shape[0] != self.n_intervals:
            raise ValueError("need one adjoint source per interval")
        lam = np.zeros(forcing.shape[1:])
        for i in reversed(range(self.n_intervals)):
            lam = lam + forcing[i]
            lam = self.model.adj_interval(self._interval_stages(i), lam)
        return lam
