import numpy as np
import pytest

from sketch4dvar.fourdvar import AssimilationProblem
from sketch4dvar.models.burgers import BurgersModel
from sketch4dvar.prior import PriorCovariance, sample_background


def small_burgers_problem(n=49, n_t=4, steps=20, n_obs=7, seed=0, variance=0.01):
    model = BurgersModel(n, 0.1, 0.01 / steps)
    prior = PriorCovariance(0.5, 500.0, n)
    truth = np.sin(np.pi * model.grid)
    xb = sample_background(prior, truth, seed)
    idx = np.linspace(3, n - 4, n_obs).astype(int)
    rng = np.random.default_rng(seed + 1)
    u, obs = truth, []
    for _ in range(n_t):
        u = model.advance(u, steps)
        obs.append(u[idx])
    y = np.array(obs) + np.sqrt(variance) * rng.standard_normal((n_t, n_obs))
    return AssimilationProblem(model, prior, xb, idx, y, variance, steps), truth


@pytest.fixture
def burgers_problem():
    return small_burgers_problem()[0]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def psd_matrix(rng, n, rank=None, decay=1.0):
    rank = n if rank is None else rank
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    lam = np.zeros(n)
    lam[:rank] = np.exp(-decay * np.arange(rank)) * 10
    return (Q * lam) @ Q.T, lam, Q
