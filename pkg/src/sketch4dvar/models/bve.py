"""Barotropic vorticity equation (wind-driven double gyre), vorticity form.

    w_t + (psi_y w_x - psi_x w_y) - Ro^{-1} psi_x = Re^{-1} Lap w + Ro^{-1} F
    Lap psi = -w

on (0, 1) x (-1, 1) with ``w = psi = 0`` on the boundary and
``F = sin(pi y)``. ``nx * ny`` interior points, ``hx = 1/(nx+1)``,
``hy = 2/(ny+1)``; the flat state has x varying fastest. All spatial
derivatives are plain second-order central differences (no Arakawa
averaging). The Poisson problem is solved by fast diagonalization with
orthonormal type-I sine transforms.
"""
from __future__ import annotations

import numpy as np
import scipy.fft as sfft
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .base import RK3Model


class BVEModel(RK3Model):
    stage_bytes_factor = 6

    def __init__(self, nx: int, ny: int, dt: float, Re: float = 200.0, Ro: float = 0.0016,
                 forcing: bool = True):
        if nx < 1 or ny < 1:
            raise ValueError("grid must have interior points")
        self.nx, self.ny = int(nx), int(ny)
        self.n = self.nx * self.ny
        self.dt = float(dt)
        self.Re, self.Ro = float(Re), float(Ro)
        self.hx = 1.0 / (self.nx + 1)
        self.hy = 2.0 / (self.ny + 1)
        kx = np.arange(1, self.nx + 1)
        ky = np.arange(1, self.ny + 1)
        mx = (2 - 2 * np.cos(kx * np.pi / (self.nx + 1))) / self.hx ** 2
        my = (2 - 2 * np.cos(ky * np.pi / (self.ny + 1))) / self.hy ** 2
        # eigenvalues of -Lap on the (ny, nx) layout
        self.mu = my[:, None] + mx[None, :]
        x, y = self.coords()
        self.F = np.sin(np.pi * y) if forcing else np.zeros_like(y)

    def coords(self):
        x = self.hx * np.arange(1, self.nx + 1)
        y = -1.0 + self.hy * np.arange(1, self.ny + 1)
        X, Y = np.meshgrid(x, y)  # (ny, nx)
        return X, Y

    # -- layout -------------------------------------------------------------
    def to_grid(self, v):
        v = np.asarray(v, dtype=float)
        return v.reshape((self.ny, self.nx) + v.shape[1:])

    def to_flat(self, g):
        return g.reshape((self.n,) + g.shape[2:])

    # -- stencils (grid layout, extra trailing axes allowed) ----------------
    def ddx(self, w):
        out = np.empty_like(w)
        out[:, 1:-1] = w[:, 2:] - w[:, :-2]
        out[:, 0] = w[:, 1]
        out[:, -1] = -w[:, -2]
        out *= 0.5 / self.hx
        return out

    def ddy(self, w):
        out = np.empty_like(w)
        out[1:-1] = w[2:] - w[:-2]
        out[0] = w[1]
        out[-1] = -w[-2]
        out *= 0.5 / self.hy
        return out

    def lap(self, w):
        out = -2.0 * w * (1 / self.hx ** 2 + 1 / self.hy ** 2)
        out[:, 1:] += w[:, :-1] / self.hx ** 2
        out[:, :-1] += w[:, 1:] / self.hx ** 2
        out[1:] += w[:-1] / self.hy ** 2
        out[:-1] += w[1:] / self.hy ** 2
        return out

    def _poisson_grid(self, w):
        mu = self.mu if w.ndim == 2 else self.mu[(...,) + (None,) * (w.ndim - 2)]
        what = sfft.dstn(w, type=1, axes=(0, 1), norm="ortho")
        return sfft.idstn(what / mu, type=1, axes=(0, 1), norm="ortho")

    def poisson_solve(self, w):
        """Streamfunction ``psi`` with ``Lap psi = -w`` (flat in, flat out)."""
        w = np.asarray(w, dtype=float)
        if w.shape[0] != self.n:
            raise ValueError(f"expected leading dimension {self.n}")
        psi = self.to_flat(self._poisson_grid(self.to_grid(w)))
        if not np.all(np.isfinite(psi)):
            raise np.linalg.LinAlgError("Poisson solve failed")
        return psi

    def laplacian_matrix(self):
        Lx = sp.diags([1.0, -2.0, 1.0], [-1, 0, 1], shape=(self.nx, self.nx)) / self.hx ** 2
        Ly = sp.diags([1.0, -2.0, 1.0], [-1, 0, 1], shape=(self.ny, self.ny)) / self.hy ** 2
        return (sp.kron(sp.identity(self.ny), Lx) + sp.kron(Ly, sp.identity(self.nx))).tocsc()

    def poisson_solve_direct(self, w):
        """Sparse-direct fallback, used as an independent check on small grids."""
        return spsolve(-self.laplacian_matrix(), np.asarray(w, dtype=float))

    # -- dynamics -----------------------------------------------------------
    def stage_cache(self, w):
        wg = self.to_grid(w)
        psi = self._poisson_grid(wg)
        return (wg, self.ddx(wg), self.ddy(wg), self.ddx(psi), self.ddy(psi), psi)

    def _tendency(self, cache):
        wg, wx, wy, px, py, _ = cache
        f = (-(py * wx - px * wy) + px / self.Ro + self.lap(wg) / self.Re + self.F / self.Ro)
        return self.to_flat(f)

    def rhs(self, w):
        """Tendency ``dw/dt`` for a flat vorticity field."""
        return self._tendency(self.stage_cache(np.asarray(w, dtype=float)))

    def _rhs_from_cache(self, cache, u):
        return self._tendency(cache)

    @staticmethod
    def _bcast(a, ndim):
        return a if ndim == 2 else a[(...,) + (None,) * (ndim - 2)]

    def rhs_tlm(self, cache, dw):
        _, wx, wy, px, py, _ = cache
        d = self.to_grid(dw)
        b = lambda a: self._bcast(a, d.ndim)
        dpsi = self._poisson_grid(d)
        dpx, dpy = self.ddx(dpsi), self.ddy(dpsi)
        out = (-(dpy * b(wx) + b(py) * self.ddx(d) - dpx * b(wy) - b(px) * self.ddy(d))
               + dpx / self.Ro + self.lap(d) / self.Re)
        return self.to_flat(out)

    def rhs_adj(self, cache, lam):
        _, wx, wy, px, py, _ = cache
        l = self.to_grid(lam)
        b = lambda a: self._bcast(a, l.ndim)
        direct = self.ddx(b(py) * l) - self.ddy(b(px) * l) + self.lap(l) / self.Re
        lam_psi = self.ddy(b(wx) * l) - self.ddx(b(wy) * l) - self.ddx(l) / self.Ro
        return self.to_flat(direct + self._poisson_grid(lam_psi))

    def max_velocity(self, w) -> float:
        psi = self._poisson_grid(self.to_grid(w))
        return float(max(np.abs(self.ddy(psi)).max(), np.abs(self.ddx(psi)).max()))

    # -- initial conditions -------------------------------------------------
    def random_field(self, seed, amplitude: float = 10.0, k0: float = 4.0):
        """Smooth random isotropic vorticity built from sine modes.

        Mode ``(kx, ky)`` of physical wavenumber ``K`` gets a Gaussian weight
        ``exp(-(K/k0)^2)``; the result is scaled to ``max|w| = amplitude``.
        """
        rng = np.random.default_rng(seed)
        kx = np.pi * np.arange(1, self.nx + 1)
        ky = np.pi * np.arange(1, self.ny + 1) / 2.0
        K = np.hypot(ky[:, None], kx[None, :]) / np.pi
        coef = rng.standard_normal((self.ny, self.nx)) * np.exp(-(K / k0) ** 2)
        w = sfft.idstn(coef, type=1, axes=(0, 1), norm="ortho")
        w *= amplitude / np.abs(w).max()
        return self.to_flat(w)

    def spin_up(self, seed=0, t_end: float = 0.25, dt: float = 1e-4, amplitude: float = 10.0):
        """Evolve a seeded random field until the double gyre has formed.

        Uses its own (smaller) step so the result does not depend on the
        assimilation step; ``t_end`` is rounded to a whole number of steps.
        """
        spin = BVEModel(self.nx, self.ny, dt, self.Re, self.Ro, forcing=bool(np.any(self.F)))
        steps = int(round(t_end / dt))
        return spin.advance(self.random_field(seed, amplitude), steps)
