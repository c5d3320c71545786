import numpy as np
import pytest

from clustval.data import DataMatrix, GoldStandard


def make_two_cloud(seed=3, n1=15, n2=15, gap=8.0, m=4):
    """Two spherical clouds separated along the all-ones direction.

    The separation is expressed in every feature so that leave-one-column-out
    measures still see the structure.
    """
    rng = np.random.default_rng(seed)
    a = rng.normal(0.0, 1.0, (n1, m))
    b = rng.normal(0.0, 1.0, (n2, m)) + gap / np.sqrt(m)
    labels = np.repeat([0, 1], [n1, n2])
    return DataMatrix(np.vstack([a, b])), GoldStandard(labels, 2)


def make_single_cloud(seed=2, n=30, m=4):
    rng = np.random.default_rng(seed)
    return DataMatrix(rng.normal(0.0, 1.0, (n, m)))


def random_partition(rng, n, k):
    """A valid random partition: every cluster non-empty."""
    assignment = np.concatenate([np.arange(k), rng.integers(0, k, n - k)])
    rng.shuffle(assignment)
    from clustval.data import Partition

    return Partition(assignment, k)


@pytest.fixture
def two_cloud():
    return make_two_cloud()


@pytest.fixture
def single_cloud():
    return make_single_cloud()
