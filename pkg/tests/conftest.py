import numpy as np
import pytest

from brl import LabeledDataset
from brl.data import StudentMixtureParams


def make_dataset(features, labels) -> LabeledDataset:
    return LabeledDataset(
        np.asarray(features, dtype=np.float64), np.asarray(labels)
    )


def random_dataset(rng, n, d, p=0.5) -> LabeledDataset:
    """Gaussian features, Bernoulli(p) labels, both classes forced."""
    labels = np.where(rng.random(n) < p, 1, -1)
    labels[0], labels[1] = 1, -1
    return LabeledDataset(rng.standard_normal((n, d)), labels)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def default_mixture():
    return StudentMixtureParams.default(0.05)
