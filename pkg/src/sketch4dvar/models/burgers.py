"""1-D viscous Burgers equation ``u_t + u u_x = nu u_xx`` on (0, 1).

Homogeneous Dirichlet boundaries, ``n`` interior points, ``dx = 1/(n+1)``,
second-order central differences in advective form, RK3-TVD in time.
The inner loops are compiled with numba; tangent and adjoint inputs may be
single vectors or ``(n, k)`` blocks.
"""
from __future__ import annotations

import logging
import warnings

import numpy as np
from numba import njit

from .base import RK3Model, _check_state

logger = logging.getLogger(__name__)


@njit(cache=True)
def _rhs(u, out, dx, nu):
    n = u.shape[0]
    c1 = 0.5 / dx
    c2 = nu / (dx * dx)
    for i in range(n):
        um = u[i - 1] if i > 0 else 0.0
        up = u[i + 1] if i < n - 1 else 0.0
        out[i] = -u[i] * (up - um) * c1 + (up - 2.0 * u[i] + um) * c2


@njit(cache=True)
def _advance(u, steps, dt, dx, nu):
    n = u.shape[0]
    f = np.empty(n)
    u1 = np.empty(n)
    u2 = np.empty(n)
    for _ in range(steps):
        _rhs(u, f, dx, nu)
        for i in range(n):
            u1[i] = u[i] + dt * f[i]
        _rhs(u1, f, dx, nu)
        for i in range(n):
            u2[i] = 0.75 * u[i] + 0.25 * (u1[i] + dt * f[i])
        _rhs(u2, f, dx, nu)
        for i in range(n):
            u[i] = u[i] / 3.0 + 2.0 / 3.0 * (u2[i] + dt * f[i])
    return u


@njit(cache=True)
def _store(u, steps, dt, dx, nu):
    n = u.shape[0]
    stages = np.empty((steps, 3, n))
    f = np.empty(n)
    u1 = np.empty(n)
    u2 = np.empty(n)
    for s in range(steps):
        stages[s, 0] = u
        _rhs(u, f, dx, nu)
        for i in range(n):
            u1[i] = u[i] + dt * f[i]
        stages[s, 1] = u1
        _rhs(u1, f, dx, nu)
        for i in range(n):
            u2[i] = 0.75 * u[i] + 0.25 * (u1[i] + dt * f[i])
        stages[s, 2] = u2
        _rhs(u2, f, dx, nu)
        for i in range(n):
            u[i] = u[i] / 3.0 + 2.0 / 3.0 * (u2[i] + dt * f[i])
    return stages, u


@njit(cache=True)
def _jac(u, d, out, dx, nu):
    # out = J(u) d for a block d of shape (n, k)
    n, k = d.shape
    c1 = 0.5 / dx
    c2 = nu / (dx * dx)
    for i in range(n):
        um = u[i - 1] if i > 0 else 0.0
        up = u[i + 1] if i < n - 1 else 0.0
        ux = (up - um) * c1
        for j in range(k):
            dm = d[i - 1, j] if i > 0 else 0.0
            dp = d[i + 1, j] if i < n - 1 else 0.0
            out[i, j] = -d[i, j] * ux - u[i] * (dp - dm) * c1 + (dp - 2.0 * d[i, j] + dm) * c2


@njit(cache=True)
def _jac_t(u, lam, out, dx, nu):
    # out = J(u)^T lam; D1 is antisymmetric and D2 symmetric under Dirichlet BCs
    n, k = lam.shape
    c1 = 0.5 / dx
    c2 = nu / (dx * dx)
    for i in range(n):
        um = u[i - 1] if i > 0 else 0.0
        up = u[i + 1] if i < n - 1 else 0.0
        ux = (up - um) * c1
        for j in range(k):
            lm = lam[i - 1, j] if i > 0 else 0.0
            lp = lam[i + 1, j] if i < n - 1 else 0.0
            out[i, j] = (-lam[i, j] * ux + (up * lp - um * lm) * c1
                         + (lp - 2.0 * lam[i, j] + lm) * c2)


@njit(cache=True)
def _tlm(stages, du, dt, dx, nu):
    n, k = du.shape
    g = np.empty((n, k))
    d1 = np.empty((n, k))
    d2 = np.empty((n, k))
    for s in range(stages.shape[0]):
        _jac(stages[s, 0], du, g, dx, nu)
        for i in range(n):
            for j in range(k):
                d1[i, j] = du[i, j] + dt * g[i, j]
        _jac(stages[s, 1], d1, g, dx, nu)
        for i in range(n):
            for j in range(k):
                d2[i, j] = 0.75 * du[i, j] + 0.25 * (d1[i, j] + dt * g[i, j])
        _jac(stages[s, 2], d2, g, dx, nu)
        for i in range(n):
            for j in range(k):
                du[i, j] = du[i, j] / 3.0 + 2.0 / 3.0 * (d2[i, j] + dt * g[i, j])
    return du


@njit(cache=True)
def _adj(stages, lam, dt, dx, nu):
    n, k = lam.shape
    g = np.empty((n, k))
    l1 = np.empty((n, k))
    l2 = np.empty((n, k))
    for s in range(stages.shape[0] - 1, -1, -1):
        _jac_t(stages[s, 2], lam, g, dx, nu)
        for i in range(n):
            for j in range(k):
                l2[i, j] = 2.0 / 3.0 * (lam[i, j] + dt * g[i, j])
                lam[i, j] = lam[i, j] / 3.0 + 0.75 * l2[i, j]
        _jac_t(stages[s, 1], l2, g, dx, nu)
        for i in range(n):
            for j in range(k):
                l1[i, j] = 0.25 * (l2[i, j] + dt * g[i, j])
        _jac_t(stages[s, 0], l1, g, dx, nu)
        for i in range(n):
            for j in range(k):
                lam[i, j] = lam[i, j] + l1[i, j] + dt * g[i, j]
    return lam


def _as_block(x):
    x = np.array(x, dtype=float, order="C")
    return (x[:, None], True) if x.ndim == 1 else (x, False)


class BurgersModel(RK3Model):
    """Parameters
    ----------
    n : int
        Interior grid points.
    nu : float
        Diffusion coefficient.
    dt : float
        RK3 step (the inner time step).
    """

    def __init__(self, n: int, nu: float, dt: float, x0=None):
        if n < 1:
            raise ValueError("need at least one interior point")
        if dt <= 0:
            raise ValueError("time step must be positive")
        self.n = int(n)
        self.nu = float(nu)
        self.dt = float(dt)
        self.dx = 1.0 / (self.n + 1)
        if x0 is not None:
            self.check_cfl(x0)

    @property
    def grid(self) -> np.ndarray:
        return self.dx * np.arange(1, self.n + 1)

    def stable_dt(self, umax: float) -> float:
        """``0.9 * min(dx / max|u|, dx^2 / (2 nu))``."""
        adv = self.dx / umax if umax > 0 else np.inf
        dif = self.dx ** 2 / (2 * self.nu) if self.nu > 0 else np.inf
        return 0.9 * min(adv, dif)

    def check_cfl(self, x0) -> bool:
        limit = self.stable_dt(float(np.max(np.abs(x0))))
        if self.dt > limit:
            warnings.warn(f"Burgers dt = {self.dt:.3e} exceeds the CFL heuristic {limit:.3e}",
                          RuntimeWarning, stacklevel=2)
            return False
        return True

    def rhs(self, u):
        out = np.empty(self.n)
        _rhs(np.ascontiguousarray(u, dtype=float), out, self.dx, self.nu)
        return out

    def advance(self, u, steps: int):
        u = _advance(np.array(u, dtype=float), int(steps), self.dt, self.dx, self.nu)
        _check_state(u, "Burgers forward integration")
        return u

    def store_interval(self, u, steps: int):
        stages, u = _store(np.array(u, dtype=float), int(steps), self.dt, self.dx, self.nu)
        _check_state(u, "Burgers forward integration")
        return stages, u

    def tlm_interval(self, stages, du):
        d, vec = _as_block(du)
        d = _tlm(stages, d, self.dt, self.dx, self.nu)
        return d[:, 0] if vec else d

    def adj_interval(self, stages, lam):
        l, vec = _as_block(lam)
        l = _adj(stages, l, self.dt, self.dx, self.nu)
        return l[:, 0] if vec else l
