import numpy as np
import pytest

from poresim import BinaryImage3D, build_graph


def random_image(rng, dims=(8, 8, 8), porosity=0.5):
    return BinaryImage3D((rng.random(dims) >= porosity).astype(np.uint8))


def all_pore(dims):
    return BinaryImage3D(np.zeros(dims, dtype=np.uint8))


def path_column(length):
    """A (1, 1, length) all-pore column: the simplest path graph."""
    return build_graph(all_pore((1, 1, length)))


@pytest.fixture
def two_node_graph():
    return build_graph(all_pore((2, 1, 1)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
