import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.distance import cdist

from conftest import make_graph
from nofe.errors import ValidationError
from nofe.graph import (
    FunctionSample,
    build_dual_graph,
    build_knn_graph,
    idw_init,
    knn_search,
    receptive_field,
)


def sample(coords, values=None):
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim == 1:
        coords = coords[:, None]
    if values is None:
        values = np.zeros((coords.shape[0], 1))
    return FunctionSample(coords, values)


def edge_set(graph):
    return {tuple(e) for e in graph.edges.tolist()}


def test_knn_graph_1d_example():
    g = build_knn_graph(sample([0.0, 1.0, 3.0]), 1)
    assert edge_set(g) == {(0, 1), (1, 0), (2, 1)}


def test_knn_graph_1d_matches_pairwise_oracle(rng):
    x = rng.uniform(size=(30, 1))
    g = build_knn_graph(sample(x), 3)
    d = cdist(x, x)
    np.fill_diagonal(d, np.inf)
    expect = {(i, int(j)) for i in range(30) for j in np.argsort(d[i], kind="stable")[:3]}
    assert edge_set(g) == expect


def test_edge_attribute_example():
    g = build_knn_graph(sample([[0.0, 0.0], [1.0, 0.0]]), 1)
    row = np.flatnonzero((g.edges == [0, 1]).all(axis=1))[0]
    np.testing.assert_array_equal(g.edge_attrs[row], [0.0, 0.0, -1.0, 0.0])


def test_unit_square_no_diagonals():
    g = build_knn_graph(sample([[0, 0], [1, 0], [0, 1], [1, 1]]), 2)
    diagonals = {(0, 3), (3, 0), (1, 2), (2, 1)}
    assert not edge_set(g) & diagonals
    assert g.n_edges == 8


def test_duplicate_coordinates_name_pair():
    with pytest.raises(ValidationError, match="0 and 2|2 and 0"):
        build_knn_graph(sample([[0, 0], [1, 1], [0, 0]]), 1)


@pytest.mark.parametrize("k", [0, 3])
def test_k_out_of_range(k):
    with pytest.raises(ValidationError):
        build_knn_graph(sample([0.0, 1.0, 2.0]), k)


def test_sample_validation():
    with pytest.raises(ValidationError):
        FunctionSample(np.zeros((3, 2)), np.zeros((2, 1)))
    with pytest.raises(ValidationError):
        FunctionSample(np.zeros((1, 2)), np.zeros((1, 1)))
    with pytest.raises(ValidationError):
        FunctionSample(np.array([[0.0], [np.nan]]), np.zeros((2, 1)))


def test_every_node_has_k_in_edges(rng):
    g = build_knn_graph(sample(rng.uniform(size=(200, 2))), 5)
    assert g.edges.shape == (1000, 2)
    np.testing.assert_array_equal(np.bincount(g.edges[:, 0]), np.full(200, 5))
    assert not np.any(g.edges[:, 0] == g.edges[:, 1])
    order = np.lexsort((g.edges[:, 1], g.edges[:, 0]))
    np.testing.assert_array_equal(order, np.arange(1000))


def test_grid_search_matches_brute_force(rng):
    x = rng.uniform(size=(3000, 2))
    i_b, d_b = knn_search(x, 6, method="brute")
    i_g, d_g = knn_search(x, 6, method="grid")
    np.testing.assert_array_equal(i_b, i_g)
    np.testing.assert_array_equal(d_b, d_g)


def test_grid_search_with_ties_and_queries():
    # integer lattice: many exactly tied distances
    xs = np.stack(np.meshgrid(np.arange(20.0), np.arange(20.0)), -1).reshape(-1, 2)
    q = np.array([[3.5, 3.5], [0.0, 0.0], [19.2, 7.0]])
    for queries in (None, q):
        a = knn_search(xs, 4, queries=queries, method="brute")
        b = knn_search(xs, 4, queries=queries, method="grid")
        np.testing.assert_array_equal(a[0], b[0])


def test_knn_3d_against_cdist(rng):
    x = rng.normal(size=(50, 3))
    idx, d2 = knn_search(x, 4)
    d = cdist(x, x) ** 2
    np.fill_diagonal(d, np.inf)
    np.testing.assert_allclose(d2, np.sort(d, axis=1)[:, :4], rtol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 4))
def test_edge_attrs_antisymmetric_part(seed, k):
    x = np.random.default_rng(seed).uniform(size=(20, 2))
    g = build_knn_graph(sample(x), k)
    i, j = g.edges.T
    np.testing.assert_array_equal(g.edge_attrs[:, :2], x[i])
    np.testing.assert_array_equal(g.edge_attrs[:, 2:], x[i] - x[j])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_graph_permutation_covariance(seed):
    r = np.random.default_rng(seed)
    x = r.uniform(size=(25, 2))
    perm = r.permutation(25)
    g = build_knn_graph(sample(x), 3)
    gp = build_knn_graph(sample(x[perm]), 3)
    mapped = {(int(perm[i]), int(perm[j])) for i, j in gp.edges.tolist()}
    assert mapped == edge_set(g)


def test_receptive_field_path_graph():
    g = make_graph(3, 1, [[1], [0], [1]])
    assert receptive_field(g, 0, 0) == {0}
    assert receptive_field(g, 0, 1) == {0, 1}
    g2 = make_graph(3, 2, [[1, 2], [0, 2], [0, 1]])
    assert receptive_field(g2, 0, 2) == {0, 1, 2}


def test_receptive_field_path_bfs():
    # 0 and 1 are mutual nearest neighbours, so nothing else is ever reached
    g = build_knn_graph(sample([0.0, 1.0, 2.1, 3.3]), 1)
    assert receptive_field(g, 0, 0) == {0}
    assert receptive_field(g, 0, 1) == {0, 1}
    assert receptive_field(g, 0, 2) == {0, 1}


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 4))
def test_receptive_field_monotone(seed, hops):
    x = np.random.default_rng(seed).uniform(size=(40, 2))
    g = build_knn_graph(sample(x), 3)
    a = receptive_field(g, 5, hops)
    b = receptive_field(g, 5, hops + 1)
    assert a <= b
    assert 5 in a


def test_idw_examples():
    src = FunctionSample(np.array([[0.0], [2.0]]), np.array([[0.0], [2.0]]))
    assert idw_init(src, np.array([[1.0]]), [[0, 0], [0, 1]])[0, 0] == pytest.approx(1.0, abs=1e-12)

    src = FunctionSample(np.array([[0.0], [5.0]]), np.array([[7.5], [1.0]]))
    assert idw_init(src, np.array([[0.0]]), [[0, 0], [0, 1]])[0, 0] == 7.5

    src = FunctionSample(np.array([[1.0], [-2.0]]), np.array([[0.0], [3.0]]))
    out = idw_init(src, np.array([[0.0]]), [[0, 0], [0, 1]])
    assert out[0, 0] == pytest.approx(0.6, abs=1e-10)


def test_idw_empty_neighbourhood():
    src = FunctionSample(np.array([[0.0], [1.0]]), np.zeros((2, 1)))
    with pytest.raises(ValidationError):
        idw_init(src, np.array([[0.5], [0.7]]), [[0, 0]])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_idw_within_neighbour_hull(seed):
    r = np.random.default_rng(seed)
    src = FunctionSample(r.uniform(size=(30, 2)), r.normal(size=(30, 2)))
    q = r.uniform(size=(10, 2))
    dual = build_dual_graph(src, q, 3, 4)
    nbrs = dual.cross_edges[:, 1].reshape(10, 4)
    lo = src.values[nbrs].min(axis=1)
    hi = src.values[nbrs].max(axis=1)
    assert np.all(dual.init_features >= lo - 1e-12)
    assert np.all(dual.init_features <= hi + 1e-12)


def test_dual_graph_identical_points():
    r = np.random.default_rng(3)
    src = FunctionSample(r.uniform(size=(15, 2)), r.normal(size=(15, 3)))
    dual = build_dual_graph(src, src.coords, 3, 1)
    np.testing.assert_array_equal(dual.cross_edges[:, 1], np.arange(15))
    np.testing.assert_array_equal(dual.init_features, src.values)


def test_dual_graph_collinear_cross_neighbours():
    src = FunctionSample(np.array([[0.0], [1.0], [2.0]]), np.zeros((3, 1)))
    dual = build_dual_graph(src, np.array([[0.4], [1.7]]), 1, 2)
    assert set(dual.cross_edges[dual.cross_edges[:, 0] == 0, 1].tolist()) == {0, 1}


def test_dual_graph_structure(rng):
    src = FunctionSample(rng.uniform(size=(40, 2)), rng.normal(size=(40, 2)))
    q = rng.uniform(size=(25, 2))
    dual = build_dual_graph(src, q, 4, 3)
    # exactly k_cross cross in-neighbours per query, senders are sources
    np.testing.assert_array_equal(np.bincount(dual.cross_edges[:, 0]), np.full(25, 3))
    assert dual.cross_edges[:, 1].max() < 40
    # target and source graphs are separate index spaces with no cross links
    assert dual.target.n_nodes == 25 and dual.target.edges.max() < 25
    assert dual.source.n_nodes == 40
    np.testing.assert_array_equal(dual.cross_attrs[:, :2], q[dual.cross_edges[:, 0]])
    assert np.isfinite(dual.init_features).all()


def test_dual_graph_dimension_mismatch(rng):
    src = FunctionSample(rng.uniform(size=(10, 2)), rng.normal(size=(10, 1)))
    with pytest.raises(ValidationError):
        build_dual_graph(src, rng.uniform(size=(5, 3)), 2, 2)
    with pytest.raises(ValidationError):
        build_dual_graph(src, rng.uniform(size=(5, 2)), 2, 11)
