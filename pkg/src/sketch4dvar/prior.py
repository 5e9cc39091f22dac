"""Background covariance ``Gamma = (alpha I - beta Lap)^{-2}``.

``Lap`` is the homogeneous-Dirichlet finite-difference Laplacian (3-point
in 1-D, 5-point in 2-D). Because the covariance is an even power of a
sparse SPD matrix ``B = alpha I - beta Lap``, its symmetric square root is
``B^{-1}`` and its inverse square root is ``B`` itself.

By default the stencil is *unscaled* (``spacing=1``), i.e. ``[1, -2, 1]``;
pass the grid spacing to get the ``1/h^2``-scaled operator. 2-D fields are
flattened with x varying fastest: ``flat = i + nx * j``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Tuple, Union

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .linalg import SeedLike, make_rng


def dirichlet_laplacian_1d(n: int, h: float = 1.0) -> sp.csr_matrix:
    return sp.diags([1.0, -2.0, 1.0], [-1, 0, 1], shape=(n, n), format="csr") / h ** 2


def dirichlet_laplacian_2d(nx: int, ny: int, hx: float = 1.0, hy: float = 1.0) -> sp.csr_matrix:
    Lx = dirichlet_laplacian_1d(nx, hx)
    Ly = dirichlet_laplacian_1d(ny, hy)
    return (sp.kron(sp.identity(ny), Lx) + sp.kron(Ly, sp.identity(nx))).tocsr()


def laplacian_eigenvalue_1d(k: int, n: int, h: float = 1.0) -> float:
    """Eigenvalue of ``-Lap`` for the sine mode ``sin(k pi i / (n + 1))``."""
    return (2.0 - 2.0 * np.cos(k * np.pi / (n + 1))) / h ** 2


@dataclass
class PriorCovariance:
    alpha: float
    beta: float
    grid: Union[int, Tuple[int, int]]
    spacing: Union[float, Tuple[float, float]] = 1.0
    _lu: object = field(default=None, init=False, repr=False)

    def __post_init__(self):
        # alpha = 0 is fine: -Lap is already SPD under Dirichlet conditions
        if self.alpha < 0 or self.beta < 0 or (self.alpha == 0 and self.beta == 0):
            raise ValueError("need alpha >= 0, beta >= 0, not both zero")
        if isinstance(self.grid, (tuple, list)):
            nx, ny = self.grid
            hx, hy = self.spacing if isinstance(self.spacing, (tuple, list)) else (self.spacing,) * 2
            self.laplacian = dirichlet_laplacian_2d(nx, ny, hx, hy)
            self.n = nx * ny
        else:
            self.laplacian = dirichlet_laplacian_1d(int(self.grid), float(self.spacing))
            self.n = int(self.grid)
        self.B = (self.alpha * sp.identity(self.n) - self.beta * self.laplacian).tocsc()

    def _check(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape[0] != self.n:
            raise ValueError(f"expected leading dimension {self.n}, got {v.shape}")
        return v

    def apply_inv_sqrt(self, v):
        """``Gamma^{-1/2} v = (alpha I - beta Lap) v``."""
        return self.B @ self._check(v)

    def apply_sqrt(self, v):
        """``Gamma^{1/2} v``: a sparse direct solve with ``alpha I - beta Lap``."""
        v = self._check(v)
        if self._lu is None:
            self._lu = splu(self.B)
        x = self._lu.solve(np.ascontiguousarray(v))
        if not np.all(np.isfinite(x)):
            raise np.linalg.LinAlgError("prior square-root solve failed")
        return x

    def apply_inv(self, v):
        """``Gamma^{-1} v``."""
        return self.apply_inv_sqrt(self.apply_inv_sqrt(v))

    def apply(self, v):
        """``Gamma v``."""
        return self.apply_sqrt(self.apply_sqrt(v))

    def dense_sqrt(self) -> np.ndarray:
        return np.linalg.inv(self.B.toarray())

    def dense(self) -> np.ndarray:
        S = self.dense_sqrt()
        return S @ S


def sample_background(prior: PriorCovariance, truth, seed: SeedLike):
    """``truth + Gamma^{1/2} xi`` with ``xi ~ N(0, I)``."""
    xi = make_rng(seed).standard_normal(prior.n)
    return np.asarray(truth, dtype=float) + prior.apply_sqrt(xi)
