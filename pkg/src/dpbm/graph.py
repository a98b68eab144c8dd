"""Communication graphs and averaging matrices."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import networkx as nx
import numpy as np


@dataclass(frozen=True)
class Graph:
    """Undirected simple graph on nodes ``0..n-1``."""

    n: int
    edges: frozenset

    def __post_init__(self):
        norm = set()
        for i, j in self.edges:
            i, j = int(i), int(j)
            if i == j:
                raise ValueError(f"self-loop at node {i}")
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise ValueError(f"edge ({i}, {j}) out of range for n={self.n}")
            norm.add((min(i, j), max(i, j)))
        object.__setattr__(self, "edges", frozenset(norm))

    @property
    def neighbors(self) -> list[list[int]]:
        nbrs = [[] for _ in range(self.n)]
        for i, j in sorted(self.edges):
            nbrs[i].append(j)
            nbrs[j].append(i)
        return [sorted(v) for v in nbrs]

    @property
    def degrees(self) -> np.ndarray:
        return np.array([len(v) for v in self.neighbors])

    def to_networkx(self) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(range(self.n))
        g.add_edges_from(self.edges)
        return g

    def is_connected(self) -> bool:
        return self.n == 1 or nx.is_connected(self.to_networkx())

    def adjacency(self) -> np.ndarray:
        adj = np.zeros((self.n, self.n), dtype=bool)
        for i, j in self.edges:
            adj[i, j] = adj[j, i] = True
        return adj


def build_topology(kind: str, n: int, p: float = 0.3, seed=None, max_tries: int = 1000) -> Graph:
    """Ring, path, star, complete or connected Erdos-Renyi graph.

    ``random_connected`` redraws ``G(n, p)`` until it is connected.
    """
    if n < 2:
        raise ValueError("a topology needs at least two nodes")
    if kind == "ring":
        g = nx.cycle_graph(n) if n > 2 else nx.path_graph(n)
    elif kind == "path":
        g = nx.path_graph(n)
    elif kind == "star":
        g = nx.star_graph(n - 1)
    elif kind == "complete":
        g = nx.complete_graph(n)
    elif kind == "random_connected":
        rng = np.random.default_rng(seed)
        for _ in range(max_tries):
            g = nx.gnp_random_graph(n, p, seed=int(rng.integers(2**31)))
            if nx.is_connected(g):
                break
        else:
            raise RuntimeError(f"no connected G({n}, {p}) after {max_tries} draws")
    else:
        raise ValueError(f"unknown topology {kind!r}")
    return Graph(n, frozenset(g.edges()))


def single_node() -> Graph:
    return Graph(1, frozenset())


def load_edgelist(path, n: int | None = None) -> Graph:
    """Read ``i j`` pairs (0-based), one edge per line; ``#`` starts a comment."""
    edges = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected 'i j'")
        edges.append((int(parts[0]), int(parts[1])))
    size = n if n is not None else 1 + max(max(e) for e in edges)
    g = Graph(size, frozenset(edges))
    if not g.is_connected():
        raise ValueError(f"{path}: graph is not connected")
    return g


def metropolis_weights(g: Graph) -> np.ndarray:
    """Metropolis-Hastings averaging matrix.

    ``w_ij = 1 / (1 + max(deg_i, deg_j))`` on edges and ``w_ii`` fills the
    row to one. The result is symmetric, doubly stochastic and has a
    strictly positive diagonal.
    """
    if not g.is_connected():
        raise ValueError("graph must be connected")
    deg = g.degrees
    W = np.zeros((g.n, g.n))
    for i, j in g.edges:
        W[i, j] = W[j, i] = 1.0 / (1.0 + max(deg[i], deg[j]))
    W[np.diag_indices(g.n)] = 1.0 - W.sum(axis=1)
    return W


def validate_averaging(W, g: Graph, tol: float = 1e-12) -> None:
    """Raise ``ValueError`` unless ``W`` is an averaging matrix for ``g``."""
    W = np.asarray(W, dtype=float)
    if W.shape != (g.n, g.n):
        raise ValueError(f"W has shape {W.shape}, graph has {g.n} nodes")
    if not np.array_equal(W, W.T):
        i, j = np.argwhere(W != W.T)[0]
        raise ValueError(f"W is not symmetric at ({i}, {j})")
    if np.any(W < 0):
        raise ValueError("W has negative entries")
    rows = W.sum(axis=1)
    bad = np.flatnonzero(np.abs(rows - 1.0) > tol)
    if bad.size:
        raise ValueError(f"row {bad[0]} sums to {rows[bad[0]]!r}")
    pattern = g.adjacency() | np.eye(g.n, dtype=bool)
    off = np.argwhere((W > 0) != pattern)
    if off.size:
        i, j = off[0]
        raise ValueError(f"W[{i}, {j}] = {W[i, j]} does not match the graph pattern")


def hat_weights(W, gamma, alpha: float) -> np.ndarray:
    """Effective mixing weights of one DPBM step.

    Off-diagonal entries are ``w_ij * gamma_i / alpha`` and the diagonal is
    ``1 - (1 - w_ii) * gamma_i / alpha``, so every row sums to one. Raises if
    some ``gamma_i >= alpha / (1 - w_ii)`` (the diagonal would not be positive).
    """
    W = np.asarray(W, dtype=float)
    n = W.shape[0]
    gamma = np.broadcast_to(np.asarray(gamma, dtype=float), (n,))
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if np.any(gamma < 0):
        raise ValueError("step sizes must be nonnegative")
    diag = np.diag(W)
    for i in range(n):
        if diag[i] < 1 and gamma[i] * (1 - diag[i]) >= alpha:
            raise ValueError(
                f"node {i}: step {gamma[i]} >= alpha/(1-w_ii) = {alpha / (1 - diag[i])}"
            )
    H = W * (gamma / alpha)[:, None]
    H[np.diag_indices(n)] = 1.0 - (1.0 - diag) * gamma / alpha
    return H
