import numpy as np
import pytest

from ssep.model import ModelInstance, NaturalTuple


def sparse_instance(seed, d=8, n=4, noise_std=0.005, slab_prob=0.2, slab_var=1.0):
    """Sparse weights, unit-norm rows, small Gaussian noise."""
    rng = np.random.default_rng(seed)
    w = np.where(rng.random(d) < slab_prob, rng.normal(0.0, np.sqrt(slab_var), d), 0.0)
    X = rng.standard_normal((n, d))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    y = X @ w + noise_std * rng.standard_normal(n)
    return ModelInstance(X, y, noise_std**2, slab_prob, slab_var)


def generic_instance(rng, d, n, noise_var=0.5, slab_prob=0.3, slab_var=1.5):
    return ModelInstance(rng.standard_normal((n, d)), rng.standard_normal(n), noise_var, slab_prob, slab_var)


def random_site(rng, d, lo=0.3, hi=3.0):
    return NaturalTuple(rng.normal(size=d), rng.uniform(lo, hi, d))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# one summary line per acceptance criterion, filled in by test_acceptance
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[key])
