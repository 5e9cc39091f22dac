"""Spectral diagnostics and theoretical bounds for sketched preconditioners.

Eigenvalues are indexed from 1 in the formulas and from 0 in arrays, so the
tail ``j > r`` is ``lam[r:]`` and ``lambda_{r+1}`` is ``lam[r]``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, Sequence

import numpy as np
from scipy.special import zeta

from .linalg import LinearMap, LowRankEVD, woodbury_apply
from .sketching import nystrom_sketch, randsvd_sketch, singleview_sketch


def _spectrum(lam) -> np.ndarray:
    lam = np.asarray(lam, dtype=float)
    if lam.ndim != 1:
        raise ValueError("eigenvalues must be a vector")
    if np.any(lam < 0):
        raise ValueError("eigenvalues must be nonnegative")
    if np.any(np.diff(lam) > 1e-12 * max(lam.max(initial=0.0), 1.0)):
        raise ValueError("eigenvalues must be nonincreasing")
    return lam


def tail_sum(lam, r: int) -> float:
    return float(np.sum(_spectrum(lam)[r:]))


def intrinsic_dimension(lam, r: int) -> float:
    """``id_r = sum_{j>r} lam_j / lam_{r+1}``."""
    lam = _spectrum(lam)
    if r < 0 or r >= lam.size:
        raise ValueError(f"r must lie in [0, {lam.size - 1}]")
    if lam[r] <= 0:
        raise ValueError("lambda_{r+1} = 0: the tail is rank deficient and id_r is undefined")
    return float(lam[r:].sum() / lam[r])


def psi_bound(lam, r: int, p: int) -> float:
    """RandSVD/Nyström bound ``lam_{r+1} + r/(p-1) sum_{j>r} lam_j``."""
    if p < 2:
        raise ValueError("the bound needs oversampling p >= 2")
    lam = _spectrum(lam)
    if r >= lam.size:
        return 0.0
    return float(lam[r] + r / (p - 1) * lam[r:].sum())


def theta_bound(lam, r: int) -> float:
    """SingleView bound ``3 sqrt(lam_1 sum_{j>r} lam_j) + 9/4 sum_{j>r} lam_j``."""
    lam = _spectrum(lam)
    if r < 0:
        raise ValueError("r must be nonnegative")
    if r >= lam.size:
        return 0.0
    t = lam[r:].sum()
    return float(3.0 * np.sqrt(lam[0] * t) + 2.25 * t)


def moderate_bound(alpha: float) -> float:
    """``zeta(alpha)``, the id_r bound for a polynomially decaying tail."""
    if alpha <= 1:
        raise ValueError("polynomial decay needs alpha > 1")
    return float(zeta(alpha))


def severe_bound(alpha: float) -> float:
    """``1 / (1 - exp(-alpha))``, the id_r bound for an exponentially decaying tail."""
    if alpha <= 0:
        raise ValueError("exponential decay needs alpha > 0")
    return float(1.0 / -np.expm1(-alpha))


def moderate_spectrum(n: int, alpha: float, r: int = 0, scale: float = 1.0) -> np.ndarray:
    """Head of ``r`` eigenvalues equal to ``scale``, then a tail
    ``lam_{r+j} = scale * j^-alpha``."""
    j = np.arange(1, n - r + 1, dtype=float)
    return scale * np.concatenate([np.ones(r), j ** -alpha])


def severe_spectrum(n: int, alpha: float, scale: float = 1.0) -> np.ndarray:
    """``lam_j = scale * exp(-alpha (j - 1))``."""
    return scale * np.exp(-alpha * np.arange(n, dtype=float))


@dataclass
class SpectrumReport:
    eigenvalues: np.ndarray
    r: int
    p: int
    id_r: float
    psi: float
    theta: float

    @classmethod
    def from_eigenvalues(cls, lam, r: int, p: int) -> "SpectrumReport":
        lam = np.sort(np.clip(np.asarray(lam, dtype=float), 0.0, None))[::-1]
        idr = intrinsic_dimension(lam, r) if r < lam.size and lam[r] > 0 else float("nan")
        return cls(lam, r, p, idr, psi_bound(lam, r, p), theta_bound(lam, r))


def intrinsic_dimension_curves(alphas_moderate: Sequence[float], alphas_severe: Sequence[float],
                               n_tail: int = 1024) -> Dict[str, np.ndarray]:
    """id_r against alpha for a tail of ``n_tail`` eigenvalues, with the bounds."""
    am = np.asarray(alphas_moderate, dtype=float)
    as_ = np.asarray(alphas_severe, dtype=float)
    j = np.arange(1, n_tail + 1, dtype=float)
    return {
        "moderate_alpha": am,
        "moderate_id": np.array([np.sum(j ** -a) for a in am]),
        "moderate_bound": np.array([moderate_bound(a) for a in am]),
        "severe_alpha": as_,
        "severe_id": np.array([np.sum(np.exp(-a * (j - 1))) for a in as_]),
        "severe_bound": np.array([severe_bound(a) for a in as_]),
    }


def _sym_sqrt_inv(M):
    w, V = np.linalg.eigh(M)
    return (V / np.sqrt(w)) @ V.T


def split_precond_condition(H, H_hat) -> float:
    """Exact ``kappa_2((I + H_hat)^{-1/2} (I + H) (I + H_hat)^{-1/2})``."""
    H = np.asarray(H, dtype=float)
    H_hat = np.asarray(H_hat, dtype=float)
    if H.shape != H_hat.shape or H.shape[0] != H.shape[1]:
        raise ValueError("H and H_hat must be square and of equal size")
    if H.shape[0] > 2000:
        raise ValueError("dense condition numbers are limited to n <= 2000")
    H_hat = 0.5 * (H_hat + H_hat.T)
    if np.linalg.eigvalsh(H_hat)[0] < -1e-10 * max(1.0, np.abs(H_hat).max()):
        raise ValueError("H_hat must be positive semidefinite")
    n = H.shape[0]
    S = _sym_sqrt_inv(np.eye(n) + H_hat)
    w = np.linalg.eigvalsh(S @ (np.eye(n) + 0.5 * (H + H.T)) @ S)
    return float(w[-1] / w[0])


def condition_of_evd(H, evd: LowRankEVD) -> float:
    return split_precond_condition(H, evd.to_dense())


def gamma_norm_error(Gamma_sqrt, dx, dx_hat) -> float:
    """``||dx - dx_hat||_{Gamma^-1} / ||dx||_{Gamma^-1}``."""
    e = np.linalg.solve(Gamma_sqrt, dx - dx_hat)
    d = np.linalg.solve(Gamma_sqrt, dx)
    return float(np.linalg.norm(e) / np.linalg.norm(d))


@dataclass
class MonteCarloResult:
    method: str
    samples: np.ndarray
    bound: float

    @property
    def mean(self) -> float:
        return float(self.samples.mean())

    @property
    def stderr(self) -> float:
        return float(self.samples.std(ddof=1) / np.sqrt(self.samples.size))

    @property
    def holds(self) -> bool:
        return self.mean <= self.bound + self.stderr


def expectation_check(lam, r: int, p: int, method: str, n_seeds: int = 100,
                      seed0: int = 0) -> MonteCarloResult:
    """Sample the preconditioned condition number on ``A = diag(sqrt(lam))``.

    RandSVD and Nyström use ``l = r + p`` and are compared with
    ``1 + psi_bound``; SingleView uses ``l1 = 2r + 1``, ``l2 = 2 l1 + 1``
    and its ``sqrt(kappa)`` is compared with ``1 + theta_bound``.
    """
    lam = _spectrum(lam)
    H = np.diag(lam)
    A = LinearMap.from_matrix(np.diag(np.sqrt(lam)), symmetric=True)
    build: Callable[[int], LowRankEVD]
    if method == "randsvd":
        build = lambda s: randsvd_sketch(A, r + p, s).evd
        bound, transform = 1.0 + psi_bound(lam, r, p), lambda k: k
    elif method == "nystrom":
        build = lambda s: nystrom_sketch(H, r + p, s).evd
        bound, transform = 1.0 + psi_bound(lam, r, p), lambda k: k
    elif method == "singleview":
        build = lambda s: singleview_sketch(A, 2 * r + 1, 4 * r + 3, s).evd
        bound, transform = 1.0 + theta_bound(lam, r), np.sqrt
    else:
        raise ValueError(f"unknown method {method!r}")
    samples = np.array([transform(condition_of_evd(H, build(seed0 + s))) for s in range(n_seeds)])
    return MonteCarloResult(method, samples, bound)


def solve_error_check(H, evd: LowRankEVD, Gamma_sqrt, g):
    """Relative ``Gamma^-1``-norm error of the sketched step and ``||E||_2``.

    The exact step solves ``(I + H) dz = -Gamma^{1/2} g``; the sketched one
    uses ``woodbury_apply``; both are mapped back by ``Gamma^{1/2}``.
    """
    n = H.shape[0]
    rhs = -Gamma_sqrt @ g
    dx = Gamma_sqrt @ np.linalg.solve(np.eye(n) + H, rhs)
    dx_hat = Gamma_sqrt @ woodbury_apply(evd, rhs)
    E = H - evd.to_dense()
    return gamma_norm_error(Gamma_sqrt, dx, dx_hat), float(np.linalg.norm(E, 2))
