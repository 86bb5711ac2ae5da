import numpy as np
import pytest

from pressmap.body_model import build_neighbor_table, generate_toy_model
from pressmap.losses import compute_stats
from pressmap.synth import GenConfig, generate_samples


@pytest.fixture(scope="session")
def model():
    return generate_toy_model(seed=0)


@pytest.fixture(scope="session")
def table(model):
    return build_neighbor_table(model)


@pytest.fixture(scope="session")
def small_samples(model):
    return generate_samples(model, GenConfig(n_samples=6, seed=7))


@pytest.fixture(scope="session")
def small_stats(small_samples):
    return compute_stats(small_samples)


@pytest.fixture()
def rng():
    return np.random.RandomState(0)
