import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sketch4dvar.linesearch import more_thuente


def mt1(a, beta=2.0):
    return -a / (a * a + beta), (a * a - beta) / (a * a + beta) ** 2


def mt2(a, beta=0.004):
    return (a + beta) ** 5 - 2 * (a + beta) ** 4, (a + beta) ** 3 * (5 * (a + beta) - 8)


def mt3(a, l=39, beta=0.01):
    base = 2 * (1 - beta) / (l * np.pi)
    phi0 = 1 - a if a <= 1 - beta else (a - 1 if a >= 1 + beta else (a - 1) ** 2 / (2 * beta) + beta / 2)
    dphi0 = -1 if a <= 1 - beta else (1 if a >= 1 + beta else (a - 1) / beta)
    return phi0 + base * np.sin(l * np.pi * a / 2), dphi0 + (1 - beta) * np.cos(l * np.pi * a / 2)


def strong_wolfe(phi, res, ftol, gtol):
    f0, g0 = phi(0.0)
    return res.value <= f0 + ftol * res.step * g0 and abs(res.slope) <= gtol * abs(g0)


@pytest.mark.parametrize("fn,ftol,gtol", [(mt1, 1e-3, 0.1), (mt2, 0.1, 0.1), (mt3, 0.1, 0.1)])
@pytest.mark.parametrize("stp0", [1e-3, 1e-1, 10.0, 1e3])
def test_standard_functions_satisfy_strong_wolfe(fn, ftol, gtol, stp0):
    f0, g0 = fn(0.0)
    res = more_thuente(fn, f0, g0, stp=stp0, ftol=ftol, gtol=gtol, max_evals=40)
    assert res.converged, res.message
    assert strong_wolfe(fn, res, ftol, gtol)


def test_quadratic_accepts_unit_newton_step():
    phi = lambda a: ((a - 1.0) ** 2, 2 * (a - 1.0))
    res = more_thuente(phi, 1.0, -2.0)
    assert res.step == 1.0 and res.n_evals == 1


def test_rejects_ascent_direction():
    with pytest.raises(ValueError):
        more_thuente(lambda a: (a, 1.0), 0.0, 1.0)


def test_budget_exhaustion_returns_best():
    calls = []

    def phi(a):
        calls.append(a)
        return -a, -1.0  # unbounded below: never satisfies the curvature test
    res = more_thuente(phi, 0.0, -1.0, stpmax=1e3, max_evals=5)
    assert not res.converged
    assert len(calls) == 5
    assert res.value == min(-a for a in calls)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.1, 10), st.floats(-5, 5), st.floats(1e-2, 1e2))
def test_convex_quadratics(curv, shift, stp0):
    # phi(a) = curv/2 (a - m)^2 with minimizer m > 0
    m = abs(shift) + 0.1
    phi = lambda a: (0.5 * curv * (a - m) ** 2, curv * (a - m))
    f0, g0 = phi(0.0)
    res = more_thuente(phi, f0, g0, stp=stp0)
    assert res.converged
    assert strong_wolfe(phi, res, 1e-4, 0.9)
