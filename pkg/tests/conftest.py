import numpy as np
import pytest

from openderm import ClassTaxonomy, DEFAULT_TAXONOMY


@pytest.fixture
def rng():
    return np.random.default_rng(20190817)


@pytest.fixture
def taxonomy():
    return DEFAULT_TAXONOMY


@pytest.fixture
def two_class_taxonomy():
    return ClassTaxonomy(known_labels=("A", "B"), unknown_label="UNK")


def random_simplex(rng, n, k, alpha=1.0):
    """Random probability matrix: n points on the k-simplex."""
    return rng.dirichlet(np.full(k, alpha), size=n)
