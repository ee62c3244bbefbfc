import numpy as np
import pytest

from poresim import (
    BinaryImage3D,
    build_graph,
    laplacian_apply,
    layer_index,
    load_graph,
    save_graph,
)

from conftest import all_pore, random_image


def test_two_voxel_column(two_node_graph):
    g = two_node_graph
    assert g.n == 2
    assert g.n_edges == 1
    assert g.degrees.tolist() == [1.0, 1.0]


def test_full_cube_edge_count():
    # 3 axes x 2 internal faces x 3 x 3 = 54 face adjacencies
    g = build_graph(all_pore((3, 3, 3)))
    assert g.n == 27
    assert g.n_edges == 54
    assert g.deg_max == 6


def test_all_solid_is_empty():
    g = build_graph(BinaryImage3D(np.ones((3, 3, 3), dtype=np.uint8)))
    assert g.n == 0
    assert g.n_edges == 0


def test_node_order_is_linear_index():
    tags = np.ones((3, 3, 1), dtype=np.uint8)
    tags[2, 0, 0] = 0  # linear 2
    tags[0, 1, 0] = 0  # linear 3
    g = build_graph(BinaryImage3D(tags))
    assert g.coords.tolist() == [[2, 0, 0], [0, 1, 0]]


def test_neighbors_differ_by_unit_step(rng):
    g = build_graph(random_image(rng))
    for i in range(g.n):
        for j in g.neighbors(i):
            diff = np.abs(g.coords[i] - g.coords[j])
            assert diff.sum() == 1 and diff.max() == 1
    assert g.degrees.max() <= 6


def test_adjacency_symmetric(rng):
    g = build_graph(random_image(rng))
    a = g.adjacency
    assert (a != a.T).nnz == 0
    assert a.diagonal().sum() == 0  # no self loops


# ---------------------------------------------------------------------------
# Laplacian
# ---------------------------------------------------------------------------

def test_laplacian_constant_in_kernel(rng):
    g = build_graph(random_image(rng))
    out = laplacian_apply(g, np.full(g.n, 3.7))
    assert np.abs(out).max() < 1e-12


def test_laplacian_two_node(two_node_graph):
    out = laplacian_apply(two_node_graph, np.array([1.0, 0.0]))
    assert out.tolist() == [1.0, -1.0]


def test_laplacian_isolated_node():
    tags = np.ones((3, 1, 1), dtype=np.uint8)
    tags[0, 0, 0] = 0  # single isolated pore voxel
    g = build_graph(BinaryImage3D(tags))
    assert laplacian_apply(g, np.array([5.0])).tolist() == [0.0]


def test_laplacian_length_mismatch(two_node_graph):
    with pytest.raises(ValueError):
        laplacian_apply(two_node_graph, np.zeros(3))


def test_laplacian_row_sums_zero(rng):
    # 1^T L m = 0 for any m: the algebraic root of mass conservation
    for _ in range(5):
        g = build_graph(random_image(rng, porosity=rng.uniform(0.3, 0.9)))
        m = rng.standard_normal(g.n)
        assert abs(laplacian_apply(g, m).sum()) <= 1e-10 * max(1.0, np.abs(m).sum())


def test_laplacian_symmetric_form(rng):
    g = build_graph(random_image(rng))
    u = rng.standard_normal(g.n)
    v = rng.standard_normal(g.n)
    assert u @ laplacian_apply(g, v) == pytest.approx(v @ laplacian_apply(g, u), rel=1e-12)


def test_laplacian_positive_semidefinite(rng):
    g = build_graph(random_image(rng))
    for _ in range(10):
        m = rng.standard_normal(g.n)
        assert m @ laplacian_apply(g, m) >= -1e-10


# ---------------------------------------------------------------------------
# layers and cache
# ---------------------------------------------------------------------------

def test_layer_index_axes():
    tags = np.ones((4, 8, 9), dtype=np.uint8)
    tags[0, 5, 7] = 0
    g = build_graph(BinaryImage3D(tags))
    assert layer_index(g, "x").tolist() == [0]
    assert layer_index(g, "y").tolist() == [5]
    assert layer_index(g, "z").tolist() == [7]
    with pytest.raises(ValueError):
        layer_index(g, "w")


def test_layer_index_column():
    g = build_graph(all_pore((1, 1, 4)))
    assert layer_index(g, "z").tolist() == [0, 1, 2, 3]


def test_cache_round_trip(tmp_path, rng):
    g = build_graph(random_image(rng))
    save_graph(g, tmp_path / "g.bin")
    back = load_graph(tmp_path / "g.bin")
    assert back.n == g.n
    assert back.dims == g.dims
    assert np.array_equal(back.coords, g.coords)
    assert np.array_equal(back.adjacency.indptr, g.adjacency.indptr)
    assert np.array_equal(back.adjacency.indices, g.adjacency.indices)
    assert np.array_equal(back.degrees, g.degrees)


def test_cache_rejects_other_files(tmp_path):
    (tmp_path / "junk.bin").write_bytes(b"not a cache\n")
    with pytest.raises(ValueError, match="not a graph cache"):
        load_graph(tmp_path / "junk.bin")
