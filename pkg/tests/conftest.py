import numpy as np
import pytest

from mixlasso.model import BoundsBox, Dataset, MixtureParams


def random_params(rng, k, p, q, beta_scale=2.0):
    pi = rng.dirichlet(np.full(k, 5.0))
    beta = rng.normal(scale=beta_scale, size=(k, p, q))
    sigma2 = rng.uniform(0.2, 2.0, size=(k, q))
    return MixtureParams(pi=pi, beta=beta, sigma2=sigma2)


def random_dataset(rng, n, p, q):
    X = rng.uniform(0.0, 1.0, size=(n, p))
    Y = rng.normal(size=(n, q))
    return Dataset(X=X, Y=Y)


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


@pytest.fixture
def wide_bounds():
    return BoundsBox(A_beta=50.0, a_sigma2=1e-4, A_sigma2=25.0, tau=1.0, rho=0.5)
