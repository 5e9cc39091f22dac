import warnings

import numpy as np
import pytest

from sketch4dvar.models.base import ModelInstabilityError
from sketch4dvar.models.burgers import BurgersModel
from sketch4dvar.models.bve import BVEModel


def dot_test(model, x0, steps, rng, k=5):
    traj = model.linearize(x0, 3, steps)
    worst = 0.0
    for _ in range(k):
        v = rng.standard_normal(model.n)
        w = rng.standard_normal((3, model.n))
        lhs = np.sum(traj.tlm(v) * w)
        rhs = traj.adj(w) @ v
        worst = max(worst, abs(lhs - rhs) / (np.linalg.norm(v) * np.linalg.norm(w)))
    return worst


def tlm_fd_error(model, x0, steps, rng, eps=1e-5):
    dx = rng.standard_normal(model.n)
    fd = (model.forward(x0 + eps * dx, steps) - model.forward(x0 - eps * dx, steps)) / (2 * eps)
    tl = model.tlm_apply(x0, dx, steps)
    return np.linalg.norm(fd - tl) / np.linalg.norm(tl)


@pytest.fixture
def burgers():
    return BurgersModel(40, 0.1, 1e-3)


@pytest.fixture
def bve():
    m = BVEModel(12, 25, 2e-4)
    return m, m.random_field(0, amplitude=5.0)


def test_burgers_dot_test(burgers, rng):
    x0 = np.sin(np.pi * burgers.grid)
    assert dot_test(burgers, x0, 4, rng) < 1e-12


def test_burgers_tlm_matches_finite_difference(burgers, rng):
    x0 = np.sin(np.pi * burgers.grid)
    assert tlm_fd_error(burgers, x0, 5, rng) < 1e-7


def test_burgers_batched_tlm_matches_columns(burgers, rng):
    x0 = np.sin(np.pi * burgers.grid)
    traj = burgers.linearize(x0, 2, 3)
    V = rng.standard_normal((burgers.n, 4))
    block = traj.tlm(V)
    for j in range(4):
        assert np.allclose(block[..., j], traj.tlm(V[:, j]))


def test_burgers_diffusion_decays_sine_mode():
    # without advection a sine mode decays at its Laplacian eigenvalue
    m = BurgersModel(63, 0.05, 1e-4)
    x = 1e-8 * np.sin(np.pi * m.grid)
    lam = (2 - 2 * np.cos(np.pi * m.dx)) / m.dx ** 2
    out = m.advance(x, 100)
    assert np.allclose(out, x * np.exp(-0.05 * lam * 1e-2), rtol=1e-6)


def test_burgers_cfl_warning():
    m = BurgersModel(50, 0.1, 0.5)
    with pytest.warns(RuntimeWarning):
        m.check_cfl(np.ones(50))


def test_burgers_instability_raises():
    m = BurgersModel(20, 0.1, 10.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        with pytest.raises(ModelInstabilityError):
            m.advance(np.sin(np.pi * m.grid) * 10, 200)


def test_trajectory_recompute_matches_cached(burgers, rng):
    x0 = np.sin(np.pi * burgers.grid)
    cached = burgers.linearize(x0, 3, 4)
    lean = burgers.linearize(x0, 3, 4, memory_budget=0)
    assert cached.cached and not lean.cached
    v = rng.standard_normal(burgers.n)
    w = rng.standard_normal((3, burgers.n))
    assert np.allclose(cached.tlm(v), lean.tlm(v))
    assert np.allclose(cached.adj(w), lean.adj(w))


def test_bve_dot_test(bve, rng):
    m, w0 = bve
    assert dot_test(m, w0, 2, rng) < 1e-12


def test_bve_tlm_matches_finite_difference(bve, rng):
    m, w0 = bve
    assert tlm_fd_error(m, w0, 3, rng, eps=1e-4) < 1e-6


def test_bve_poisson_matches_direct(bve, rng):
    m, _ = bve
    w = rng.standard_normal(m.n)
    assert np.allclose(m.poisson_solve(w), m.poisson_solve_direct(w), atol=1e-12)


def test_bve_spin_up_double_gyre():
    m = BVEModel(24, 49, 4e-4)
    w = m.spin_up(0, t_end=0.05, dt=1e-4)
    psi = m.to_grid(m.poisson_solve(w))
    assert np.all(np.isfinite(w))
    assert np.array_equal(w, m.spin_up(0, t_end=0.05, dt=1e-4))
    # forcing sin(pi y) drives opposite-signed gyres in the two halves
    assert psi[m.ny // 2 + 1:].mean() * psi[: m.ny // 2].mean() < 0
