"""Small dense kernels and matrix-free building blocks.

Everything here works on plain ``numpy`` arrays. Operators are wrapped in
:class:`LinearMap`, which only knows how to apply itself (and its adjoint)
to a vector or to a block of column vectors.

Random matrices come from :func:`numpy.random.default_rng`, i.e. the PCG64
bit generator with numpy's ziggurat normal sampler. Seeds are always explicit.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

logger = logging.getLogger(__name__)

EPS = np.finfo(float).eps

SeedLike = Union[int, np.random.Generator, None]


class BreakdownError(ArithmeticError):
    """Raised when a Krylov recurrence meets a non-positive curvature."""


class IndefinitePreconditionerError(BreakdownError):
    """Raised by PCG when ``<r, M r> <= 0`` for a preconditioner claimed SPD."""


def _check_finite(name, arr):
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf")


def batched_apply(fn: Callable[[np.ndarray], np.ndarray], X: np.ndarray,
                  workers: int = 1) -> np.ndarray:
    """Apply ``fn`` to the columns of ``X``, optionally in concurrent chunks.

    ``fn`` must accept an ``(n, k)`` block. With ``workers > 1`` the columns
    are split into contiguous chunks that run on a thread pool; the output
    is always assembled in the original column order.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        return fn(X)
    k = X.shape[1]
    if workers <= 1 or k < 2:
        return fn(X)
    chunks = np.array_split(np.arange(k), min(workers, k))
    with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
        parts = list(pool.map(lambda idx: fn(X[:, idx]), chunks))
    return np.concatenate(parts, axis=1)


class LinearMap:
    """A matrix-free linear operator ``R^n_cols -> R^n_rows``.

    Parameters
    ----------
    shape : (n_rows, n_cols)
    apply : callable
        Forward action. Must accept ``(n_cols,)`` vectors and ``(n_cols, k)``
        blocks.
    adjoint_apply : callable, optional
        Transpose action, same block convention. Required for
        :meth:`adjoint_apply`, :attr:`T` and :meth:`gram`.
    """

    def __init__(self, shape, apply, adjoint_apply=None, *, symmetric=False,
                 workers: int = 1):
        n_rows, n_cols = (int(s) for s in shape)
        if n_rows < 1 or n_cols < 1:
            raise ValueError(f"invalid shape {shape}")
        self.shape = (n_rows, n_cols)
        self._apply = apply
        self._adjoint = adjoint_apply
        if symmetric and adjoint_apply is None:
            self._adjoint = apply
        self.symmetric = symmetric
        self.workers = workers

    @property
    def n_rows(self) -> int:
        return self.shape[0]

    @property
    def n_cols(self) -> int:
        return self.shape[1]

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[0] != self.n_cols:
            raise ValueError(f"expected leading dimension {self.n_cols}, got {x.shape}")
        return batched_apply(self._apply, x, self.workers)

    def adjoint_apply(self, y: np.ndarray) -> np.ndarray:
        if self._adjoint is None:
            raise NotImplementedError("operator has no adjoint action")
        y = np.asarray(y, dtype=float)
        if y.shape[0] != self.n_rows:
            raise ValueError(f"expected leading dimension {self.n_rows}, got {y.shape}")
        return batched_apply(self._adjoint, y, self.workers)

    __call__ = apply

    def __matmul__(self, x):
        return self.apply(x)

    @property
    def T(self) -> "LinearMap":
        return LinearMap((self.n_cols, self.n_rows), self.adjoint_apply, self.apply,
                         symmetric=self.symmetric)

    def gram(self) -> "LinearMap":
        """The symmetric map ``x -> A^T A x``."""
        def _gram(x):
            return self.adjoint_apply(self.apply(x))
        return LinearMap((self.n_cols, self.n_cols), _gram, symmetric=True)

    def to_dense(self) -> np.ndarray:
        return self.apply(np.eye(self.n_cols))

    @classmethod
    def from_matrix(cls, M, symmetric=None) -> "LinearMap":
        M = np.asarray(M, dtype=float)
        if M.ndim != 2:
            raise ValueError("from_matrix expects a 2-D array")
        if symmetric is None:
            symmetric = M.shape[0] == M.shape[1] and np.array_equal(M, M.T)
        return cls(M.shape, lambda x: M @ x, lambda y: M.T @ y, symmetric=symmetric)

    @classmethod
    def identity(cls, n: int) -> "LinearMap":
        return cls((n, n), lambda x: np.array(x, dtype=float), symmetric=True)

    def __repr__(self):
        return f"LinearMap(shape={self.shape}, symmetric={self.symmetric})"


def as_callable(op) -> Callable[[np.ndarray], np.ndarray]:
    if op is None:
        return None
    if isinstance(op, LinearMap):
        return op.apply
    if isinstance(op, np.ndarray):
        return lambda x: op @ x
    if hasattr(op, "apply"):
        return op.apply
    return op


@dataclass(frozen=True)
class LowRankEVD:
    """``H_hat = basis @ diag(eigenvalues) @ basis.T`` with orthonormal basis."""

    basis: np.ndarray
    eigenvalues: np.ndarray

    def __post_init__(self):
        V = np.asarray(self.basis, dtype=float)
        lam = np.asarray(self.eigenvalues, dtype=float).ravel()
        if V.ndim != 2 or V.shape[1] != lam.size:
            raise ValueError(f"basis {V.shape} does not match {lam.size} eigenvalues")
        if np.any(lam < 0):
            raise ValueError("eigenvalues must be nonnegative")
        if lam.size > 1 and np.any(np.diff(lam) > 0):
            raise ValueError("eigenvalues must be nonincreasing")
        V.setflags(write=False)
        lam.setflags(write=False)
        object.__setattr__(self, "basis", V)
        object.__setattr__(self, "eigenvalues", lam)

    @classmethod
    def from_pairs(cls, basis, eigenvalues) -> "LowRankEVD":
        """Sort into nonincreasing order and clip round-off negatives to zero."""
        lam = np.maximum(np.asarray(eigenvalues, dtype=float), 0.0)
        order = np.argsort(-lam, kind="stable")
        return cls(np.asarray(basis, dtype=float)[:, order], lam[order])

    @classmethod
    def zeros(cls, n: int, rank: int = 1) -> "LowRankEVD":
        return cls(np.eye(n, rank), np.zeros(rank))

    @property
    def n(self) -> int:
        return self.basis.shape[0]

    @property
    def rank(self) -> int:
        return self.eigenvalues.size

    def apply(self, v):
        V = self.basis
        lam = self.eigenvalues
        coef = V.T @ v
        coef = coef * (lam if coef.ndim == 1 else lam[:, None])
        return V @ coef

    def to_dense(self) -> np.ndarray:
        return (self.basis * self.eigenvalues) @ self.basis.T

    def inverse_shifted(self, v):
        return woodbury_apply(self, v)


def woodbury_apply(evd: LowRankEVD, v: np.ndarray) -> np.ndarray:
    """Return ``(I + V diag(lam) V^T)^{-1} v``.

    Uses ``I - V diag(lam / (1 + lam)) V^T``, which equals the usual
    ``(lam^{-1} + 1)^{-1}`` weighting and gives exactly zero weight to
    zero eigenvalues.
    """
    v = np.asarray(v, dtype=float)
    if v.shape[0] != evd.n:
        raise ValueError(f"vector of length {v.shape[0]} does not match basis with {evd.n} rows")
    _check_finite("v", v)
    _check_finite("basis", evd.basis)
    _check_finite("eigenvalues", evd.eigenvalues)
    lam = evd.eigenvalues
    weight = lam / (1.0 + lam)
    coef = evd.basis.T @ v
    coef = coef * (weight if coef.ndim == 1 else weight[:, None])
    return v - evd.basis @ coef


@dataclass
class PCGReport:
    solution: np.ndarray
    iterations: int
    relative_residuals: list = field(default_factory=list)
    converged: bool = False

    @property
    def final_residual(self) -> float:
        return self.relative_residuals[-1] if self.relative_residuals else 0.0


def pcg_solve(op, rhs, precond=None, tol: float = 1e-9,
              max_iter: Optional[int] = None) -> PCGReport:
    """Preconditioned conjugate gradients (Hestenes-Stiefel recurrence).

    Starts from the zero vector. Convergence is declared when
    ``||r_k|| / ||rhs|| <= tol`` using the recurrence residual and the
    true right-hand side norm. ``precond`` applies ``M^{-1}``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    A = as_callable(op)
    M = as_callable(precond)
    b = np.asarray(rhs, dtype=float)
    n = b.size
    if max_iter is None:
        max_iter = 10 * n
    bnorm = np.linalg.norm(b)
    x = np.zeros_like(b)
    if bnorm == 0.0:
        return PCGReport(x, 0, [0.0], True)

    r = b.copy()
    z = M(r) if M is not None else r.copy()
    rz = float(r @ z)
    if rz <= 0:
        raise IndefinitePreconditionerError(f"<r, M r> = {rz:.3e} at iteration 0")
    p = z.copy()
    history = []
    converged = False
    k = 0
    while k < max_iter:
        q = A(p)
        pq = float(p @ q)
        if pq <= 0:
            raise BreakdownError(f"operator curvature <p, A p> = {pq:.3e} at iteration {k}")
        alpha = rz / pq
        x += alpha * p
        r -= alpha * q
        k += 1
        rel = np.linalg.norm(r) / bnorm
        history.append(rel)
        if rel <= tol:
            converged = True
            break
        z = M(r) if M is not None else r
        rz_new = float(r @ z)
        if rz_new <= 0:
            raise IndefinitePreconditionerError(
                f"<r, M r> = {rz_new:.3e} at iteration {k}; preconditioner is not SPD")
        p = z + (rz_new / rz) * p
        rz = rz_new
    if not converged:
        logger.warning("PCG stopped after %d iterations at relative residual %.3e", k, history[-1])
    return PCGReport(x, k, history, converged)


def thin_qr(Y: np.ndarray, *, return_flags: bool = False):
    """Reduced QR with ``diag(R) >= 0``.

    The sign convention makes the factorization unique for full-rank input.
    With ``return_flags`` a boolean mask marks columns whose ``|R_ii|`` falls
    below ``max(n, l) * eps * max|R_jj|`` (numerically dependent columns).
    """
    Y = np.asarray(Y, dtype=float)
    if Y.ndim != 2:
        raise ValueError("thin_qr expects a 2-D array")
    Q, R = np.linalg.qr(Y, mode="reduced")
    d = np.sign(np.diag(R))
    d[d == 0] = 1.0
    Q = Q * d
    R = R * d[:, None]
    if not return_flags:
        return Q, R
    diag = np.abs(np.diag(R))
    scale = diag.max() if diag.size else 0.0
    flags = diag <= max(Y.shape) * EPS * scale
    if scale == 0.0:
        flags[:] = True
    return Q, R, flags


def thin_svd(W: np.ndarray):
    """Economy SVD ``W = U diag(s) Vt``."""
    return np.linalg.svd(np.asarray(W, dtype=float), full_matrices=False)


def truncated_pinv(M: np.ndarray, *, return_rank: bool = False):
    """Pseudoinverse dropping singular values below ``max(dims) * eps * s_max``."""
    M = np.asarray(M, dtype=float)
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    cutoff = max(M.shape) * EPS * (s[0] if s.size else 0.0)
    keep = s > cutoff
    inv = (Vt[keep].T / s[keep]) @ U[:, keep].T
    if return_rank:
        return inv, int(keep.sum())
    return inv


def cholesky_lower(C: np.ndarray) -> np.ndarray:
    return np.linalg.cholesky(C)


def make_rng(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def gaussian_matrix(n: int, l: int, seed: SeedLike) -> np.ndarray:
    """``n x l`` matrix of i.i.d. standard normals from ``default_rng(seed)``.

    Passing a ``Generator`` draws from its current stream position instead.
    """
    if n < 1 or l < 1:
        raise ValueError("dimensions must be positive")
    return make_rng(seed).standard_normal((n, l))
