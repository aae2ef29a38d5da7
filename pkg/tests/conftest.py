import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from spatperm.graph import Graph, WeightMatrix, knn_weights, load_edge_list  # noqa: E402


def path_graph(n):
    adj = np.zeros((n, n), dtype=int)
    for i in range(n - 1):
        adj[i, i + 1] = adj[i + 1, i] = 1
    return adj


def ring_adjacency(n):
    adj = path_graph(n)
    adj[0, n - 1] = adj[n - 1, 0] = 1
    return adj


def random_connected_adjacency(rng, n, p=0.4):
    """Random spanning tree plus independent extra edges."""
    adj = np.zeros((n, n), dtype=int)
    order = rng.permutation(n)
    for k in range(1, n):
        a, b = order[k], order[rng.integers(0, k)]
        adj[a, b] = adj[b, a] = 1
    extra = np.triu(rng.random((n, n)) < p, 1)
    adj = np.maximum(adj, (extra | extra.T).astype(int))
    np.fill_diagonal(adj, 0)
    return adj


@pytest.fixture
def p3():
    return load_edge_list("src,dst\na,b\nb,c\n")


@pytest.fixture
def p3_w(p3):
    return knn_weights(p3, 1)


@pytest.fixture
def star5():
    return load_edge_list("src,dst\nc,l1\nc,l2\nc,l3\nc,l4\n")


@pytest.fixture
def ring8_w():
    return WeightMatrix(ring_adjacency(8), k=1)


def weights_from_adjacency(adj, k=1):
    return knn_weights(Graph.from_adjacency(adj), k)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
