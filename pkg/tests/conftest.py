import numpy as np
import pytest

from cascadeiv import Dataset


def default_pi(k):
    pi = np.full((k, k), -0.04)
    np.fill_diagonal(pi, 0.4)
    return pi


def bernoulli_iv_data(
    seed,
    n=4000,
    k=3,
    beta=None,
    pi=None,
    base=0.3,
    noise=0.5,
    n_clusters=40,
    intercept=1.0,
    x_extra=0,
    group_share=None,
):
    """IV data with a known linear first stage and binary treatments."""
    rng = np.random.default_rng(seed)
    pi = default_pi(k) if pi is None else np.asarray(pi, dtype=float)
    beta = np.linspace(0.5, -0.5, k) if beta is None else np.asarray(beta, dtype=float)
    z = rng.random((n, k))
    a = (rng.random((n, k)) < base + z @ pi.T).astype(float)
    x = np.ones((n, 1))
    gamma = np.zeros(0)
    if x_extra:
        x = np.column_stack([x, rng.standard_normal((n, x_extra))])
        gamma = rng.uniform(-0.5, 0.5, x_extra)
    y = intercept + a @ beta + (x[:, 1:] @ gamma if x_extra else 0.0)
    y = y + noise * rng.standard_normal(n)
    cluster = rng.integers(0, n_clusters, n)
    group = None
    if group_share is not None:
        group = np.where(rng.random(n) < group_share, "f", "m")
    return Dataset(y=y, a=a, z=z, x=x, cluster=cluster, group_label=group)


def noiseless_iv_data(seed, n=2000, k=3, beta=(0.5, -0.2, 0.0), base=0.3):
    """y built exactly from the treatments; no residual noise."""
    rng = np.random.default_rng(seed)
    beta = np.asarray(beta, dtype=float)
    z = rng.random((n, k))
    a = (rng.random((n, k)) < base + z @ default_pi(k).T).astype(float)
    y = 1.0 + a @ beta
    cluster = rng.integers(0, 30, n)
    return Dataset(y=y, a=a, z=z, x=np.ones((n, 1)), cluster=cluster)


def well_conditioned_pi(rng, k, max_cond=50.0):
    while True:
        pi = rng.uniform(-0.5, 0.5, (k, k))
        np.fill_diagonal(pi, rng.uniform(0.8, 1.5, k) * np.sign(rng.uniform(-1, 1, k)))
        if np.linalg.cond(pi.T) < max_cond:
            return pi


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
