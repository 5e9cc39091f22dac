import numpy as np
import pytest

from sketch4dvar.fourdvar import (AssimilationProblem, GNConfig, Mode, cost, evaluate, gn_solve,
                                  gn_step_sketchprec, gn_step_sketchsolv, gradient, misfit_operator)
from sketch4dvar.linalg import LowRankEVD
from sketch4dvar.sketching import SketchConfig

from conftest import small_burgers_problem


def test_cost_at_background_is_data_misfit(burgers_problem):
    p = burgers_problem
    J = cost(p, p.background)
    states = p.forward_states(p.background)
    d = p.innovations(states)
    assert J == pytest.approx(0.5 * np.sum(d ** 2 / p.obs_variances))


def test_gradient_matches_finite_differences(burgers_problem, rng):
    p = burgers_problem
    x = p.background + 0.01 * rng.standard_normal(p.n)
    g = gradient(p, x)
    for _ in range(5):
        d = p.prior.apply_sqrt(rng.standard_normal(p.n))
        eps = 1e-4
        fd = (cost(p, x + eps * d) - cost(p, x - eps * d)) / (2 * eps)
        assert fd == pytest.approx(g @ d, rel=1e-6)


def test_evaluate_counts_one_forward_one_adjoint(burgers_problem):
    p = burgers_problem
    p.counters.reset()
    evaluate(p, p.background)
    snap = p.counters.snapshot()
    assert snap["fwd"] == 1 and snap["adj"] == 1 and snap["tlm"] == 0


def test_misfit_operator_adjoint_and_counts(burgers_problem, rng):
    p = burgers_problem
    p.counters.reset()
    A = misfit_operator(p, p.background, charge="offline")
    V = rng.standard_normal((p.n, 3))
    W = rng.standard_normal((p.m, 3))
    lhs = np.sum((A @ V) * W)
    rhs = np.sum(V * A.adjoint_apply(W))
    assert abs(lhs - rhs) <= 1e-10 * np.linalg.norm(V) * np.linalg.norm(W)
    snap = p.counters.snapshot()
    assert snap["offline_tlm"] == 3 and snap["offline_adj"] == 3 and snap["tlm"] == 0


def test_misfit_operator_is_linearized_residual(burgers_problem, rng):
    # A v matches a central difference of the whitened innovations along Gamma^{1/2} v
    p = burgers_problem
    A = misfit_operator(p, p.background)
    v = rng.standard_normal(p.n)
    d = p.prior.apply_sqrt(v)
    eps = 1e-5
    plus = p.innovations(p.forward_states(p.background + eps * d))
    minus = p.innovations(p.forward_states(p.background - eps * d))
    fd = ((plus - minus) / (2 * eps) / np.sqrt(p.obs_variances)).ravel()
    assert np.allclose(A @ v, fd, rtol=1e-6, atol=1e-8 * np.abs(fd).max())


def test_sketchsolv_step_with_exact_sketch_is_gn_step(burgers_problem):
    p = burgers_problem
    x = p.background
    A = misfit_operator(p, x)
    H = A.to_dense().T @ A.to_dense()
    w, V = np.linalg.eigh(H)
    evd = LowRankEVD.from_pairs(V, np.maximum(w, 0))
    g = gradient(p, x)
    dx_solv = gn_step_sketchsolv(p, g, evd)
    dx_pcg, rep = gn_step_sketchprec(p, A, g, None, pcg_tol=1e-12)
    assert rep.converged
    assert np.allclose(dx_solv, dx_pcg, rtol=1e-6, atol=1e-10 * np.abs(dx_pcg).max())


def test_problem_validation():
    p, _ = small_burgers_problem()
    kw = dict(model=p.model, prior=p.prior, background=p.background, obs_indices=p.obs_indices,
              observations=p.observations, obs_variances=0.01, steps_per_interval=p.steps_per_interval)
    with pytest.raises(ValueError):
        AssimilationProblem(**{**kw, "obs_indices": p.obs_indices[::-1]})
    with pytest.raises(ValueError):
        AssimilationProblem(**{**kw, "obs_variances": 0.0})
    with pytest.raises(ValueError):
        AssimilationProblem(**{**kw, "background": p.background[:-1]})
    with pytest.raises(ValueError):
        AssimilationProblem(**{**kw, "observations": p.observations[:, :-1]})


def test_config_validation():
    with pytest.raises(ValueError):
        GNConfig(mode="Newton")
    with pytest.raises(ValueError):
        GNConfig(grad_tol=2.0)


@pytest.mark.parametrize("mode", list(Mode))
def test_all_modes_reduce_cost_and_error(mode):
    p, truth = small_burgers_problem()
    cfg = GNConfig(mode=mode, sketch=SketchConfig(method="randsvd", l=10, l_inc=5, seed=0),
                   max_gn_iters=8, grad_tol=1e-5)
    res = gn_solve(p, cfg)
    assert res.cost < cost(p, p.background)
    assert np.linalg.norm(res.x - truth) < np.linalg.norm(p.background - truth)
    if mode is not Mode.SKETCH_SOLV:
        assert res.converged, res.message
    x, logs = res
    assert len(logs) == res.iterations


def test_counter_families_are_separate():
    p, _ = small_burgers_problem()
    cfg = GNConfig(mode=Mode.SKETCH_PREC, sketch=SketchConfig(method="singleview", l=6, seed=0),
                   max_gn_iters=3)
    res = gn_solve(p, cfg)
    c = res.counters
    assert c["offline_tlm"] == 6 * res.iterations
    assert c["offline_adj"] == 13 * res.iterations
    assert c["tlm"] == res.total_pcg
    assert c["probe_tlm"] == 0


def test_gn_solve_is_deterministic():
    p1, _ = small_burgers_problem()
    p2, _ = small_burgers_problem()
    cfg = GNConfig(mode=Mode.SKETCH_PREC_A, sketch=SketchConfig(method="nystrom", l=4, l_inc=2, seed=9),
                   max_gn_iters=4)
    a, b = gn_solve(p1, cfg), gn_solve(p2, cfg)
    assert np.array_equal(a.x, b.x)
    assert a.counters == b.counters
