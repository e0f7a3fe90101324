import numpy as np
import pytest

from privitr.dataset import Dataset
from privitr.datagen import generate_outcome


def make_noise_free_dataset(n: int = 400, seed: int = 5, binary: bool = True,
                            psi=(1.0, 1.0)) -> Dataset:
    """Exact outcome-model data (no noise): recovery should be numerically exact."""
    rng = np.random.default_rng(seed)
    x = rng.normal(10.0, 1.0, n)
    if binary:
        a = (rng.random(n) < 0.3).astype(float)
    else:
        a = rng.normal(x, 2.0)
    y = generate_outcome(x, a, psi, rng=None, noise_sd=0.0)
    site = np.asarray([str(1 + i % 3) for i in range(n)], dtype=object)
    return Dataset(site=site, covariates={"x": x}, treatment=a, outcome=y)


@pytest.fixture
def noise_free_binary():
    return make_noise_free_dataset(binary=True)


@pytest.fixture
def noise_free_continuous():
    return make_noise_free_dataset(binary=False)
