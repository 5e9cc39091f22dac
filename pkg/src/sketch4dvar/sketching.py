"""Randomized low-rank sketches of the data-misfit Hessian ``H = A^T A``.

Every builder returns a :class:`SketchReport` whose ``evd`` holds
``H_hat = V diag(lam) V^T``. Counts of forward (``A``, tangent linear) and
transpose (``A^T``, adjoint) applications are tracked column by column; an
application of ``H`` counts as one of each.

Column blocks are pushed through :func:`~sketch4dvar.linalg.batched_apply`,
so operators that vectorize over columns (all models in this package do)
evaluate a whole sketch in one sweep, and ``workers > 1`` spreads the
columns over a thread pool.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.linalg import solve_triangular

from .linalg import (
    EPS,
    LinearMap,
    LowRankEVD,
    SeedLike,
    batched_apply,
    gaussian_matrix,
    make_rng,
    thin_qr,
    thin_svd,
    truncated_pinv,
    woodbury_apply,
)

logger = logging.getLogger(__name__)

METHODS = ("randsvd", "nystrom", "singleview", "lanczos")


class SketchError(RuntimeError):
    pass


@dataclass(frozen=True)
class SketchConfig:
    """Sketch sizes, adaptivity tolerances and the seed.

    ``l`` doubles as ``l1`` for SingleView; ``l2`` defaults to ``2 l1 + 1``.
    ``l_inc``/``l2_inc`` are the adaptive growth increments (``l2_inc``
    defaults to ``2 l_inc`` so the ``l2 = 2 l1 + 1`` relation is kept).
    """

    method: str = "randsvd"
    l: int = 15
    l2: Optional[int] = None
    l_inc: int = 5
    l2_inc: Optional[int] = None
    eps_sk: float = 1.01
    eps_re: float = 10.0
    seed: int = 0
    max_rank: Optional[int] = None
    workers: int = 1

    def __post_init__(self):
        method = self.method.lower().replace("ö", "o")
        if method not in METHODS:
            raise ValueError(f"unknown sketch method {self.method!r}; choose from {METHODS}")
        object.__setattr__(self, "method", method)
        if self.l < 1:
            raise ValueError("sketch size l must be >= 1")
        if self.l_inc < 1:
            raise ValueError("increment l_inc must be >= 1")
        if not (1.0 <= self.eps_sk < self.eps_re):
            raise ValueError("need 1 <= eps_sk < eps_re")
        if self.max_rank is not None and self.max_rank < self.l:
            raise ValueError("max_rank must be >= l")

    @property
    def l1(self) -> int:
        return self.l

    @property
    def l2_eff(self) -> int:
        return self.l2 if self.l2 is not None else 2 * self.l + 1

    @property
    def l2_inc_eff(self) -> int:
        return self.l2_inc if self.l2_inc is not None else 2 * self.l_inc

    def with_seed(self, seed: int) -> "SketchConfig":
        return replace(self, seed=seed)


@dataclass
class SketchReport:
    evd: LowRankEVD
    tlm_count: int
    adj_count: int
    final_l: int
    kappa_history: list = field(default_factory=list)
    converged: bool = True
    final_l2: Optional[int] = None

    @property
    def kappa(self) -> float:
        return self.kappa_history[-1] if self.kappa_history else float("nan")


def _evd_from_w(W: np.ndarray) -> LowRankEVD:
    # W is l x n with H_hat = W^T W
    _, s, Vt = thin_svd(W)
    return LowRankEVD.from_pairs(Vt.T, s ** 2)


def _check_size(l: int, A: LinearMap):
    if l < 1 or l > min(A.shape):
        raise ValueError(f"sketch size {l} must lie in [1, {min(A.shape)}] for an operator of shape {A.shape}")


def _orthogonalize(Y: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Block Gram-Schmidt of ``Y`` against ``Q``, with a second pass if any
    column loses more than a factor ``1/sqrt(2)`` of its norm."""
    if Q.shape[1] == 0:
        return Y
    before = np.linalg.norm(Y, axis=0)
    Y = Y - Q @ (Q.T @ Y)
    after = np.linalg.norm(Y, axis=0)
    if np.any(after < before / math.sqrt(2.0)):
        Y = Y - Q @ (Q.T @ Y)
    return Y


def _as_map(H) -> LinearMap:
    if isinstance(H, LinearMap):
        return H
    H = np.asarray(H, dtype=float)
    return LinearMap.from_matrix(H, symmetric=True)


def cond_estimate(H, evd: LowRankEVD, seed: SeedLike) -> float:
    """Randomized probe ``||(I + H)(I + H_hat)^{-1} v||_2`` with ``v`` uniform on
    the unit sphere.

    With ``evd`` built at the current point this is the sketch-accuracy
    estimate; with ``evd`` from an earlier iterate it is the reuse test.
    Costs one application of ``H``.
    """
    H = _as_map(H)
    if H.n_cols != evd.n:
        raise ValueError(f"operator dimension {H.n_cols} does not match sketch dimension {evd.n}")
    w = make_rng(seed).standard_normal(evd.n)
    v = w / np.linalg.norm(w)
    u = woodbury_apply(evd, v)
    return float(np.linalg.norm(u + H.apply(u)))


def _probe_rng(seed: SeedLike) -> np.random.Generator:
    # separate stream so probe draws never shift the sketch matrices
    if isinstance(seed, np.random.Generator):
        return np.random.default_rng(seed.integers(2**63))
    return np.random.default_rng([0 if seed is None else int(seed), 0x5EED])


# -- fixed-size sketches ---------------------------------------------------

def randsvd_sketch(A: LinearMap, l: int, seed: SeedLike, workers: int = 1) -> SketchReport:
    """Range finder on ``A`` followed by an SVD of ``W = Q^T A``.

    ``H_hat = A^T Q Q^T A``; ``l`` forward and ``l`` transpose applications.
    """
    _check_size(l, A)
    Omega = gaussian_matrix(A.n_cols, l, seed)
    Y = batched_apply(A.apply, Omega, workers)
    Q, _ = thin_qr(Y)
    Wt = batched_apply(A.adjoint_apply, Q, workers)
    return SketchReport(_evd_from_w(Wt.T), l, l, l)


def nystrom_from_sketch(Omega: np.ndarray, Y: np.ndarray) -> LowRankEVD:
    """Stabilized Nyström assembly from a test matrix and ``Y = H Omega``."""
    n = Omega.shape[0]
    ynorm = np.linalg.norm(Y, 2)
    if ynorm == 0.0:
        return LowRankEVD.zeros(n, Omega.shape[1])
    nu = math.sqrt(n) * EPS * ynorm
    for shift in (nu, 10.0 * nu):
        Ys = Y + shift * Omega
        C = Omega.T @ Ys
        try:
            L = np.linalg.cholesky(0.5 * (C + C.T))
            break
        except np.linalg.LinAlgError:
            logger.warning("Nystrom Cholesky failed with shift %.3e, retrying with %.3e", shift, 10 * shift)
    else:
        raise SketchError("Nystrom Cholesky failed after shift retry; use a larger stabilization shift")
    W = solve_triangular(L, Ys.T, lower=True)
    _, s, Vt = thin_svd(W)
    return LowRankEVD.from_pairs(Vt.T, np.maximum(0.0, s ** 2 - shift))


def nystrom_sketch(H, l: int, seed: SeedLike, workers: int = 1) -> SketchReport:
    """Nyström approximation ``H Omega (Omega^T H Omega)^+ (H Omega)^T``.

    All ``l`` modes are kept; round-off below the shift is floored at zero.
    """
    H = _as_map(H)
    if H.n_rows != H.n_cols:
        raise ValueError("Nystrom needs a square operator")
    _check_size(l, H)
    Omega = gaussian_matrix(H.n_cols, l, seed)
    Y = batched_apply(H.apply, Omega, workers)
    return SketchReport(nystrom_from_sketch(Omega, Y), l, l, l)


def singleview_from_sketch(Q_Y, Psi, Z) -> tuple[LowRankEVD, np.ndarray, np.ndarray]:
    M = Psi.T @ Q_Y
    Q_M, R_M = thin_qr(M)
    evd = _singleview_evd(Q_M, R_M, Z)
    return evd, Q_M, R_M


def _singleview_evd(Q_M, R_M, Z) -> LowRankEVD:
    R_pinv, rank = truncated_pinv(R_M, return_rank=True)
    if rank < R_M.shape[1]:
        logger.warning("SingleView: R_M numerically singular (rank %d of %d); truncated pseudoinverse used",
                       rank, R_M.shape[1])
    W = R_pinv @ (Z @ Q_M).T
    return _evd_from_w(W)


def singleview_sketch(A: LinearMap, l1: int, l2: Optional[int] = None, seed: SeedLike = 0,
                      workers: int = 1) -> SketchReport:
    """One-pass sketch from independent range (``A Omega``) and co-range
    (``A^T Psi``) samples; ``l1`` forward, ``l2`` transpose applications."""
    if l2 is None:
        l2 = 2 * l1 + 1
    if l2 < l1:
        raise ValueError("SingleView needs l2 >= l1")
    _check_size(l1, A)
    rng = make_rng(seed)
    Omega = rng.standard_normal((A.n_cols, l1))
    Psi = rng.standard_normal((A.n_rows, l2))
    # the two batches are independent of each other
    Y = batched_apply(A.apply, Omega, workers)
    Z = batched_apply(A.adjoint_apply, Psi, workers)
    Q_Y, _ = thin_qr(Y)
    evd, _, _ = singleview_from_sketch(Q_Y, Psi, Z)
    return SketchReport(evd, l1, l2, l1, final_l2=l2)


class LanczosProcess:
    """Symmetric Lanczos with full reorthogonalization, extendable in steps."""

    def __init__(self, H, start: np.ndarray):
        self.H = _as_map(H)
        start = np.asarray(start, dtype=float)
        nrm = np.linalg.norm(start)
        if nrm == 0.0:
            raise ValueError("Lanczos start vector must be nonzero")
        self.Q = [start / nrm]
        self.alpha: list[float] = []
        self.beta: list[float] = []
        self.applies = 0
        self.breakdown = False
        self._scale = 0.0

    @property
    def steps(self) -> int:
        return len(self.alpha)

    def extend(self, k: int) -> None:
        n = self.H.n_cols
        for _ in range(k):
            if self.breakdown or self.steps >= n:
                return
            q = self.Q[-1]
            w = self.H.apply(q)
            self.applies += 1
            a = float(q @ w)
            self.alpha.append(a)
            Qm = np.column_stack(self.Q)
            w = w - Qm @ (Qm.T @ w)
            w = w - Qm @ (Qm.T @ w)
            b = float(np.linalg.norm(w))
            self._scale = max(self._scale, abs(a), b)
            if b <= 1e-12 * max(self._scale, 1.0) or self.steps >= n:
                self.breakdown = b <= 1e-12 * max(self._scale, 1.0)
                return
            self.beta.append(b)
            self.Q.append(w / b)

    def ritz(self) -> LowRankEVD:
        k = self.steps
        T = np.diag(self.alpha)
        if k > 1:
            off = np.array(self.beta[: k - 1])
            T += np.diag(off, 1) + np.diag(off, -1)
        theta, S = np.linalg.eigh(T)
        V = np.column_stack(self.Q[:k]) @ S
        return LowRankEVD.from_pairs(V, theta)


def lanczos_sketch(H, l: int, start: np.ndarray) -> SketchReport:
    """``l`` Lanczos steps; Ritz pairs returned as the sketch.

    Stops early on an invariant subspace. Each step is one ``H`` application.
    """
    proc = LanczosProcess(H, start)
    proc.extend(l)
    return SketchReport(proc.ritz(), proc.applies, proc.applies, proc.steps)


# -- adaptive sketches -----------------------------------------------------

def _max_rank(cfg: SketchConfig, A: LinearMap) -> int:
    cap = min(A.shape)
    return cap if cfg.max_rank is None else min(cfg.max_rank, cap)


def _warn_cap(name, l, kappa, eps):
    logger.warning("%s reached max rank %d with kappa_sk = %.4f > %.4f", name, l, kappa, eps)


def adaptive_randsvd(A: LinearMap, cfg: SketchConfig, H=None) -> SketchReport:
    """RandSVD grown by ``cfg.l_inc`` columns until ``kappa_sk <= eps_sk``."""
    H = A.gram() if H is None else _as_map(H)
    _check_size(cfg.l, A)
    cap = _max_rank(cfg, A)
    rng = make_rng(cfg.seed)
    probe = _probe_rng(cfg.seed)
    w = cfg.workers

    Omega = rng.standard_normal((A.n_cols, cfg.l))
    Q_hat, _ = thin_qr(batched_apply(A.apply, Omega, w))
    Wt = batched_apply(A.adjoint_apply, Q_hat, w)
    l = cfg.l
    tlm = adj = l
    Q = np.empty((A.n_rows, 0))
    evd = _evd_from_w(Wt.T)
    history = [cond_estimate(H, evd, probe)]
    while history[-1] > cfg.eps_sk:
        if l >= cap:
            _warn_cap("adaptive RandSVD", l, history[-1], cfg.eps_sk)
            return SketchReport(evd, tlm, adj, l, history, converged=False)
        Q = np.hstack([Q, Q_hat])
        inc = min(cfg.l_inc, cap - l)
        Omega = rng.standard_normal((A.n_cols, inc))
        Y = _orthogonalize(batched_apply(A.apply, Omega, w), Q)
        Q_hat, _ = thin_qr(Y)
        Wt = np.hstack([Wt, batched_apply(A.adjoint_apply, Q_hat, w)])
        l += inc
        tlm += inc
        adj += inc
        evd = _evd_from_w(Wt.T)
        history.append(cond_estimate(H, evd, probe))
    return SketchReport(evd, tlm, adj, l, history)


def adaptive_nystrom(H, cfg: SketchConfig, probe_op=None) -> SketchReport:
    """Nyström grown by ``cfg.l_inc`` columns, reassembling on the
    accumulated ``(Omega, H Omega)`` pair each pass.

    ``probe_op`` (default ``H``) is the operator used by the condition
    estimate, so its cost can be accounted separately.
    """
    H = _as_map(H)
    P = H if probe_op is None else _as_map(probe_op)
    _check_size(cfg.l, H)
    cap = _max_rank(cfg, H)
    rng = make_rng(cfg.seed)
    probe = _probe_rng(cfg.seed)
    Omega = rng.standard_normal((H.n_cols, cfg.l))
    Y = batched_apply(H.apply, Omega, cfg.workers)
    l = cfg.l
    evd = nystrom_from_sketch(Omega, Y)
    history = [cond_estimate(P, evd, probe)]
    while history[-1] > cfg.eps_sk:
        if l >= cap:
            _warn_cap("adaptive Nystrom", l, history[-1], cfg.eps_sk)
            return SketchReport(evd, l, l, l, history, converged=False)
        inc = min(cfg.l_inc, cap - l)
        Om = rng.standard_normal((H.n_cols, inc))
        Omega = np.hstack([Omega, Om])
        Y = np.hstack([Y, batched_apply(H.apply, Om, cfg.workers)])
        l += inc
        evd = nystrom_from_sketch(Omega, Y)
        history.append(cond_estimate(P, evd, probe))
    return SketchReport(evd, l, l, l, history)


def singleview_qr_update(Q_M, R_M, Psi, Psi_new, Q_Y, Q_Y_new):
    """QR of ``[Psi Psi_new]^T [Q_Y Q_Y_new]`` from the QR of ``Psi^T Q_Y``.

    Three-factor update: fold the new rows ``Psi_new^T Q_Y`` into the
    existing triangle, then orthogonalize and append the new columns.
    """
    Qt_Y, Rt_Y = thin_qr(Psi_new.T @ Q_Y)
    Q1, Rt_M = thin_qr(np.vstack([R_M, Rt_Y]))
    r0, c0 = Q_M.shape
    r1, c1 = Qt_Y.shape
    block = np.zeros((r0 + r1, c0 + c1))
    block[:r0, :c0] = Q_M
    block[r0:, c0:] = Qt_Y
    Qt_M = block @ Q1
    P = np.vstack([Psi.T @ Q_Y_new, Psi_new.T @ Q_Y_new])
    coef = Qt_M.T @ P
    P_hat = P - Qt_M @ coef
    # second pass, as for the range basis
    coef2 = Qt_M.T @ P_hat
    P_hat = P_hat - Qt_M @ coef2
    coef = coef + coef2
    Q_P, R_P = thin_qr(P_hat)
    k_old = Rt_M.shape[1]
    k_new = R_P.shape[1]
    R_new = np.zeros((k_old + k_new, k_old + k_new))
    R_new[:k_old, :k_old] = Rt_M
    R_new[:k_old, k_old:] = coef
    R_new[k_old:, k_old:] = R_P
    return np.hstack([Qt_M, Q_P]), R_new


def adaptive_singleview(A: LinearMap, cfg: SketchConfig, H=None) -> SketchReport:
    """SingleView grown by ``(l_inc, l2_inc)`` with incremental QR of
    ``Psi^T Q_Y``. New co-range samples ``A^T Psi_new`` are drawn each pass."""
    H = A.gram() if H is None else _as_map(H)
    l1, l2 = cfg.l1, cfg.l2_eff
    if l2 < l1:
        raise ValueError("SingleView needs l2 >= l1")
    _check_size(l1, A)
    cap = _max_rank(cfg, A)
    rng = make_rng(cfg.seed)
    probe = _probe_rng(cfg.seed)
    w = cfg.workers

    Omega = rng.standard_normal((A.n_cols, l1))
    Psi = rng.standard_normal((A.n_rows, l2))
    Y = batched_apply(A.apply, Omega, w)
    Z = batched_apply(A.adjoint_apply, Psi, w)
    Q_Y, _ = thin_qr(Y)
    evd, Q_M, R_M = singleview_from_sketch(Q_Y, Psi, Z)
    history = [cond_estimate(H, evd, probe)]
    while history[-1] > cfg.eps_sk:
        if l1 >= cap:
            _warn_cap("adaptive SingleView", l1, history[-1], cfg.eps_sk)
            return SketchReport(evd, l1, l2, l1, history, converged=False, final_l2=l2)
        inc1 = min(cfg.l_inc, cap - l1)
        inc2 = cfg.l2_inc_eff
        Om = rng.standard_normal((A.n_cols, inc1))
        Ps = rng.standard_normal((A.n_rows, inc2))
        Yn = _orthogonalize(batched_apply(A.apply, Om, w), Q_Y)
        Zn = batched_apply(A.adjoint_apply, Ps, w)
        Q_Yn, _ = thin_qr(Yn)
        Q_M, R_M = singleview_qr_update(Q_M, R_M, Psi, Ps, Q_Y, Q_Yn)
        Q_Y = np.hstack([Q_Y, Q_Yn])
        Psi = np.hstack([Psi, Ps])
        Z = np.hstack([Z, Zn])
        l1 += inc1
        l2 += inc2
        evd = _singleview_evd(Q_M, R_M, Z)
        history.append(cond_estimate(H, evd, probe))
    return SketchReport(evd, l1, l2, l1, history, final_l2=l2)


def adaptive_lanczos(H, cfg: SketchConfig, start: np.ndarray, probe_op=None) -> SketchReport:
    """Lanczos extended by ``cfg.l_inc`` steps until ``kappa_sk <= eps_sk``."""
    H = _as_map(H)
    P = H if probe_op is None else _as_map(probe_op)
    cap = _max_rank(cfg, H)
    probe = _probe_rng(cfg.seed)
    proc = LanczosProcess(H, start)
    proc.extend(cfg.l)
    evd = proc.ritz()
    history = [cond_estimate(P, evd, probe)]
    while history[-1] > cfg.eps_sk and not proc.breakdown:
        if proc.steps >= cap:
            _warn_cap("adaptive Lanczos", proc.steps, history[-1], cfg.eps_sk)
            return SketchReport(evd, proc.applies, proc.applies, proc.steps, history, converged=False)
        proc.extend(min(cfg.l_inc, cap - proc.steps))
        evd = proc.ritz()
        history.append(cond_estimate(P, evd, probe))
    return SketchReport(evd, proc.applies, proc.applies, proc.steps, history)


def build_sketch(A: LinearMap, cfg: SketchConfig, *, adaptive: bool = False, H=None,
                 probe_op=None, start: Optional[np.ndarray] = None,
                 seed: Optional[int] = None) -> SketchReport:
    """Dispatch on ``cfg.method``.

    ``H`` is the Hessian sampled by Nyström and Lanczos (default
    ``A.gram()``); ``probe_op`` is the Hessian used by the adaptive
    condition estimates (default ``H``).
    """
    if seed is not None:
        cfg = cfg.with_seed(seed)
    H = A.gram() if H is None else H
    P = H if probe_op is None else probe_op
    m = cfg.method
    if m == "lanczos":
        if start is None:
            raise ValueError("Lanczos needs a start vector")
        return adaptive_lanczos(H, cfg, start, P) if adaptive else lanczos_sketch(H, cfg.l, start)
    if adaptive:
        if m == "randsvd":
            return adaptive_randsvd(A, cfg, P)
        if m == "nystrom":
            return adaptive_nystrom(H, cfg, P)
        return adaptive_singleview(A, cfg, P)
    if m == "randsvd":
        return randsvd_sketch(A, cfg.l, cfg.seed, cfg.workers)
    if m == "nystrom":
        return nystrom_sketch(H, cfg.l, cfg.seed, cfg.workers)
    return singleview_sketch(A, cfg.l1, cfg.l2_eff, cfg.seed, cfg.workers)
