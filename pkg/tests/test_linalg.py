import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sketch4dvar.linalg import (BreakdownError, IndefinitePreconditionerError, LinearMap, LowRankEVD,
                                batched_apply, pcg_solve, thin_qr, woodbury_apply)

from conftest import psd_matrix


def test_linear_map_matches_matrix(rng):
    M = rng.standard_normal((7, 5))
    A = LinearMap.from_matrix(M)
    x, y = rng.standard_normal(5), rng.standard_normal(7)
    assert np.allclose(A.apply(x), M @ x)
    assert np.allclose(A.adjoint_apply(y), M.T @ y)
    assert np.allclose(A.T.to_dense(), M.T)
    assert np.allclose(A.gram().to_dense(), M.T @ M)
    assert np.allclose((A @ np.eye(5)), M)


def test_linear_map_rejects_wrong_shape(rng):
    A = LinearMap.from_matrix(rng.standard_normal((4, 3)))
    with pytest.raises(ValueError):
        A.apply(np.ones(4))


def test_batched_apply_parallel_matches_serial(rng):
    M = rng.standard_normal((6, 6))
    X = rng.standard_normal((6, 9))
    fn = lambda v: M @ v
    assert np.allclose(batched_apply(fn, X, 1), M @ X)
    assert np.allclose(batched_apply(fn, X, 3), M @ X)


def test_woodbury_matches_dense_inverse(rng):
    H, lam, Q = psd_matrix(rng, 30, rank=8)
    evd = LowRankEVD.from_pairs(Q[:, :8], lam[:8])
    v = rng.standard_normal((30, 3))
    ref = np.linalg.solve(np.eye(30) + H, v)
    assert np.allclose(woodbury_apply(evd, v), ref, atol=1e-12)


def test_woodbury_zero_eigenvalue_is_identity(rng):
    evd = LowRankEVD.zeros(10, 2)
    v = rng.standard_normal(10)
    assert np.array_equal(woodbury_apply(evd, v), v)


def test_woodbury_rejects_nan():
    evd = LowRankEVD.zeros(4)
    with pytest.raises(ValueError):
        woodbury_apply(evd, np.array([1.0, np.nan, 0.0, 0.0]))


def test_evd_validation():
    with pytest.raises(ValueError):
        LowRankEVD(np.eye(3, 2), np.array([1.0, 2.0]))
    with pytest.raises(ValueError):
        LowRankEVD(np.eye(3, 2), np.array([1.0, -2.0]))
    evd = LowRankEVD.from_pairs(np.eye(3, 2), np.array([1.0, 2.0]))
    assert list(evd.eigenvalues) == [2.0, 1.0]


def test_pcg_solves_spd_system(rng):
    H, _, _ = psd_matrix(rng, 40, decay=0.2)
    S = np.eye(40) + H
    b = rng.standard_normal(40)
    rep = pcg_solve(S, b, tol=1e-12)
    assert rep.converged
    assert np.allclose(rep.solution, np.linalg.solve(S, b), atol=1e-9)
    assert rep.iterations == len(rep.relative_residuals)


def test_pcg_exact_preconditioner_one_iteration(rng):
    H, lam, Q = psd_matrix(rng, 40, rank=10)
    evd = LowRankEVD.from_pairs(Q[:, :10], lam[:10])
    rep = pcg_solve(np.eye(40) + H, rng.standard_normal(40), lambda r: woodbury_apply(evd, r), tol=1e-10)
    assert rep.iterations == 1


def test_pcg_zero_rhs():
    rep = pcg_solve(np.eye(3), np.zeros(3))
    assert rep.iterations == 0 and rep.converged


def test_pcg_detects_indefinite_operator():
    with pytest.raises(BreakdownError):
        pcg_solve(-np.eye(3), np.ones(3))
    with pytest.raises(IndefinitePreconditionerError):
        pcg_solve(np.eye(3), np.ones(3), precond=lambda r: -r)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 12), st.integers(1, 6), st.integers(0, 10_000))
def test_thin_qr_orthonormal_with_nonnegative_diagonal(m, k, seed):
    k = min(k, m)
    Y = np.random.default_rng(seed).standard_normal((m, k))
    Q, R = thin_qr(Y)
    assert np.allclose(Q.T @ Q, np.eye(k), atol=1e-10)
    assert np.allclose(Q @ R, Y, atol=1e-10)
    assert np.all(np.diag(R) >= 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(3, 20), st.integers(0, 10_000))
def test_woodbury_inverse_property(n, seed):
    rng = np.random.default_rng(seed)
    r = max(1, n // 3)
    Q, _ = np.linalg.qr(rng.standard_normal((n, r)))
    lam = np.sort(rng.exponential(5.0, r))[::-1]
    evd = LowRankEVD(Q, lam)
    v = rng.standard_normal(n)
    u = woodbury_apply(evd, v)
    assert np.allclose(u + evd.apply(u), v, atol=1e-10)
