import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dpbm.graph import (Graph, build_topology, hat_weights, load_edgelist, metropolis_weights,
                        validate_averaging)


def test_ring_of_three_is_triangle():
    assert build_topology("ring", 3).edges == {(0, 1), (1, 2), (0, 2)}


def test_star_degrees():
    deg = sorted(build_topology("star", 4).degrees.tolist())
    assert deg == [1, 1, 1, 3]


def test_ring_twenty():
    g = build_topology("ring", 20)
    assert np.all(g.degrees == 2) and g.is_connected()


@pytest.mark.parametrize("kind", ["ring", "path", "star", "complete", "random_connected"])
def test_topologies_are_connected(kind):
    for n in (2, 5, 12):
        g = build_topology(kind, n, seed=n)
        assert g.n == n and g.is_connected()


def test_topology_errors():
    with pytest.raises(ValueError):
        build_topology("ring", 1)
    with pytest.raises(ValueError):
        build_topology("hexagon", 4)
    with pytest.raises(RuntimeError):
        build_topology("random_connected", 30, p=0.0, seed=0, max_tries=5)
    with pytest.raises(ValueError):
        Graph(3, frozenset({(1, 1)}))


def test_metropolis_examples():
    W = metropolis_weights(build_topology("ring", 3))
    np.testing.assert_allclose(W, np.full((3, 3), 1 / 3), atol=1e-15)
    np.testing.assert_allclose(metropolis_weights(build_topology("path", 2)), [[0.5, 0.5], [0.5, 0.5]])
    g = build_topology("star", 4)
    W = metropolis_weights(g)
    centre = int(np.argmax(g.degrees))
    for leaf in range(4):
        if leaf != centre:
            assert W[leaf, centre] == pytest.approx(0.25)
            assert W[leaf, leaf] == pytest.approx(0.75)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 25), st.floats(0.1, 0.9), st.integers(0, 10**6))
def test_metropolis_is_averaging_matrix(n, p, seed):
    g = build_topology("random_connected", n, p=p, seed=seed)
    W = metropolis_weights(g)
    validate_averaging(W, g)
    assert np.all(np.diag(W) > 0)


def test_validate_rejects_counterexamples():
    g = build_topology("ring", 4)
    W = metropolis_weights(g)
    asym = W.copy()
    asym[0, 1] += 0.01
    asym[0, 0] -= 0.01
    with pytest.raises(ValueError, match="symmetric"):
        validate_averaging(asym, g)
    scaled = W * 1.01
    with pytest.raises(ValueError, match="sums"):
        validate_averaging(scaled, g)
    off = W.copy()
    off[0, 2] = off[2, 0] = 0.1
    off[0, 0] -= 0.1
    off[2, 2] -= 0.1
    with pytest.raises(ValueError, match="pattern"):
        validate_averaging(off, g)


def test_hat_weight_examples():
    W = metropolis_weights(build_topology("ring", 3))
    np.testing.assert_allclose(hat_weights(W, 2.0, 2.0), W)
    H0 = hat_weights(W, 0.0, 2.0)
    np.testing.assert_allclose(H0, np.eye(3))
    H = hat_weights(W, 1.0, 2.0)
    np.testing.assert_allclose(np.diag(H), 2 / 3)
    np.testing.assert_allclose(H[~np.eye(3, dtype=bool)], 1 / 6)
    with pytest.raises(ValueError, match="node 0"):
        hat_weights(W, [3.0, 1.0, 1.0], 2.0)


def test_hat_weights_row_stochastic_random():
    rng = np.random.default_rng(0)
    for trial in range(1000):
        n = int(rng.integers(2, 9))
        g = build_topology("random_connected", n, p=0.5, seed=trial)
        W = metropolis_weights(g)
        alpha = float(10 ** rng.uniform(-2, 2))
        gamma = rng.uniform(0, 0.999, n) * alpha / (1 - np.diag(W))
        H = hat_weights(W, gamma, alpha)
        np.testing.assert_allclose(H.sum(axis=1), 1.0, atol=1e-12)
        pattern = g.adjacency() | np.eye(n, dtype=bool)
        assert np.all(H[pattern] > 0) and np.all(H[~pattern] == 0)


def test_edgelist(tmp_path):
    p = tmp_path / "g.txt"
    p.write_text("# square\n0 1\n1 2\n2 3\n3 0\n")
    g = load_edgelist(p)
    assert g.n == 4 and len(g.edges) == 4
    p.write_text("0 1\n2 3\n")
    with pytest.raises(ValueError, match="connected"):
        load_edgelist(p)
