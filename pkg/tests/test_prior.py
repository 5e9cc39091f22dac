import numpy as np
import pytest

from sketch4dvar.prior import PriorCovariance, laplacian_eigenvalue_1d, sample_background


def test_sqrt_and_inverse_sqrt_roundtrip(rng):
    p = PriorCovariance(0.5, 500.0, 50)
    v = rng.standard_normal((50, 3))
    assert np.allclose(p.apply_inv_sqrt(p.apply_sqrt(v)), v)
    assert np.allclose(p.apply(p.apply_inv(v[:, 0])), v[:, 0])


def test_dense_forms_agree(rng):
    p = PriorCovariance(1.0, 2.0, (5, 7))
    v = rng.standard_normal(35)
    assert np.allclose(p.dense_sqrt() @ v, p.apply_sqrt(v))
    assert np.allclose(p.dense() @ v, p.apply(v))
    assert np.allclose(p.dense(), p.dense().T)


def test_sine_modes_are_eigenvectors():
    n, alpha, beta = 30, 0.5, 3.0
    p = PriorCovariance(alpha, beta, n)
    i = np.arange(1, n + 1)
    for k in (1, 4, 17):
        s = np.sin(k * np.pi * i / (n + 1))
        mu = alpha + beta * laplacian_eigenvalue_1d(k, n)
        assert np.allclose(p.apply_inv_sqrt(s), mu * s)


def test_alpha_zero_is_allowed():
    p = PriorCovariance(0.0, 0.06, (4, 6))
    assert np.all(np.linalg.eigvalsh(p.B.toarray()) > 0)


@pytest.mark.parametrize("alpha,beta", [(-1, 1), (1, -1), (0, 0)])
def test_invalid_parameters(alpha, beta):
    with pytest.raises(ValueError):
        PriorCovariance(alpha, beta, 10)


def test_dimension_check():
    with pytest.raises(ValueError):
        PriorCovariance(1, 1, 10).apply_sqrt(np.ones(9))


def test_background_statistics():
    p = PriorCovariance(0.5, 5.0, 20)
    truth = np.zeros(20)
    draws = np.array([sample_background(p, truth, s) for s in range(4000)])
    C = np.cov(draws.T)
    G = p.dense()
    assert np.linalg.norm(C - G) / np.linalg.norm(G) < 0.1
    assert np.array_equal(sample_background(p, truth, 3), sample_background(p, truth, 3))
