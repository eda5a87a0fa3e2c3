import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from itconsensus.graph import (
    Graph,
    GraphError,
    jacobi_eigh,
    laplacian,
    min_eig_LB,
    min_eigpair_LB,
    paper_fixture_graph,
    pinned_laplacian,
)


def test_fixture_lambda_min_matches_published_value():
    assert min_eig_LB(paper_fixture_graph()) == pytest.approx(0.1981, abs=1e-3)


def test_fixture_against_lapack():
    m = pinned_laplacian(paper_fixture_graph())
    assert min_eig_LB(paper_fixture_graph()) == pytest.approx(np.linalg.eigvalsh(m)[0], abs=1e-12)


def test_pinned_path_closed_form():
    # path of N unit edges pinned at one end: eigenvalues 2 - 2cos((2k-1)pi/(2N+1))
    N = 4
    g = Graph.from_edges(N, [(i, i + 1) for i in range(N - 1)], [1, 0, 0, 0])
    w, _ = jacobi_eigh(pinned_laplacian(g))
    expected = sorted(2 - 2 * math.cos((2 * k - 1) * math.pi / (2 * N + 1)) for k in range(1, N + 1))
    np.testing.assert_allclose(w, expected, atol=1e-12)
    assert min_eig_LB(g) == pytest.approx(0.120615, abs=1e-6)


def test_laplacian_rows_sum_to_zero():
    L = laplacian(paper_fixture_graph())
    np.testing.assert_allclose(L.sum(axis=1), 0.0)


def test_eigenpair_residual():
    g = paper_fixture_graph()
    lam, v = min_eigpair_LB(g)
    m = pinned_laplacian(g)
    assert np.linalg.norm(m @ v - lam * v) < 1e-10
    assert np.linalg.norm(v) == pytest.approx(1.0)


def test_single_follower():
    g = Graph(np.zeros((1, 1)), [2.5])
    assert min_eig_LB(g) == pytest.approx(2.5)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 7), st.integers(0, 10_000))
def test_jacobi_matches_lapack(n, seed):
    r = np.random.default_rng(seed)
    a = r.normal(size=(n, n))
    a = a + a.T
    w, v = jacobi_eigh(a)
    np.testing.assert_allclose(w, np.linalg.eigvalsh(a), atol=1e-9)
    np.testing.assert_allclose(v.T @ a @ v, np.diag(w), atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.permutations(range(4)))
def test_permutation_invariance(perm):
    g = paper_fixture_graph()
    assert min_eig_LB(g.permuted(list(perm))) == pytest.approx(min_eig_LB(g), abs=1e-12)


def test_disconnected_component_without_pin():
    g = Graph.from_edges(4, [(0, 1), (2, 3)], [1, 0, 0, 0])
    with pytest.raises(GraphError, match="not leader-connected"):
        min_eig_LB(g)


@pytest.mark.parametrize(
    "adj, pin, msg",
    [
        ([[0, 1], [0, 0]], [1, 0], "symmetric"),
        ([[0, 1], [1, 0]], [0, 0], "pinned"),
        ([[0, -1], [-1, 0]], [1, 0], "negative"),
        ([[1, 0], [0, 0]], [1, 0], "self loop"),
        ([[0, 1], [1, 0]], [1], "length"),
    ],
)
def test_validation(adj, pin, msg):
    with pytest.raises(GraphError, match=msg):
        Graph(np.array(adj, float), pin)


def test_arrays_are_read_only():
    g = paper_fixture_graph()
    with pytest.raises(ValueError):
        g.adjacency[0, 1] = 3.0


def test_edges_round_trip():
    g = paper_fixture_graph()
    g2 = Graph.from_edges(4, g.edges(), g.pinning)
    np.testing.assert_array_equal(g.adjacency, g2.adjacency)
