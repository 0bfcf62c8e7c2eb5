import numpy as np
import pytest

from prefmf.design import unit_box
from prefmf.engine import RunConfig
from prefmf.mcmc import HMCConfig
from prefmf.surrogates import SurrogateConfig


@pytest.fixture
def box2():
    return unit_box(2)


@pytest.fixture
def bump_utility():
    """Smooth 2-D utility with a unique interior peak at (0.7, 0.3)."""

    def u(X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.exp(-0.5 * np.sum(((X - [0.7, 0.3]) / 0.25) ** 2, axis=1))

    return u


def fast_surrogate_config(seed=0, **kwargs) -> SurrogateConfig:
    """Small-but-honest MCMC settings for unit tests."""
    defaults = dict(
        mcmc=HMCConfig(chains=2, warmup=150, draws=150, seed=seed),
        predict_thin=96,
    )
    defaults.update(kwargs)
    return SurrogateConfig(**defaults)


def fast_run_config(seed=0, **kwargs) -> RunConfig:
    defaults = dict(
        surrogate=fast_surrogate_config(seed, warm_start=True),
        acq_budget=192,
        rec_budget=192,
    )
    defaults.update(kwargs)
    return RunConfig(**defaults)


def consistent_comparisons(rng, X, utility, n):
    """Noise-free comparisons between random index pairs, winner by utility."""
    from prefmf.likelihoods import Comparison

    u = utility(X)
    comps = []
    for _ in range(n):
        i, j = rng.choice(X.shape[0], size=2, replace=False)
        i, j = int(i), int(j)
        comps.append(Comparison(i, j) if u[i] >= u[j] else Comparison(j, i))
    return comps
