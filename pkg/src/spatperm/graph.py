"""Graphs from edge lists and binary k-nearest-neighbour weight matrices."""

from __future__ import annotations

import csv
import enum
import io
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "GraphError",
    "Graph",
    "WeightMatrix",
    "ConnectivityClass",
    "load_edge_list",
    "knn_weights",
    "classify_vertex",
    "bfs_distances",
]


class GraphError(ValueError):
    """Malformed edge list or unusable graph."""


@dataclass
class Graph:
    """Undirected simple graph; vertex order is insertion order."""

    vertices: list[str] = field(default_factory=list)
    edges: set[frozenset] = field(default_factory=set)

    def __post_init__(self) -> None:
        self._index = {v: i for i, v in enumerate(self.vertices)}
        if len(self._index) != len(self.vertices):
            raise GraphError("duplicate vertex ids")
        for e in self.edges:
            if len(e) != 2:
                raise GraphError(f"invalid edge {set(e)}")
            for v in e:
                if v not in self._index:
                    raise GraphError(f"edge references unknown vertex {v!r}")

    @property
    def n(self) -> int:
        return len(self.vertices)

    def index(self, vertex_id: str) -> int:
        return self._index[vertex_id]

    def add_vertex(self, vertex_id: str) -> int:
        if vertex_id not in self._index:
            self._index[vertex_id] = len(self.vertices)
            self.vertices.append(vertex_id)
        return self._index[vertex_id]

    def add_edge(self, u: str, v: str) -> None:
        if u == v:
            raise GraphError(f"self-loop on {u!r}")
        self.add_vertex(u)
        self.add_vertex(v)
        self.edges.add(frozenset((u, v)))

    @classmethod
    def from_adjacency(cls, adj: np.ndarray, ids: list[str] | None = None) -> "Graph":
        adj = np.asarray(adj)
        n = adj.shape[0]
        ids = list(ids) if ids is not None else [str(i) for i in range(n)]
        g = cls(vertices=list(ids))
        for i, j in zip(*np.nonzero(np.triu(adj, 1))):
            g.edges.add(frozenset((ids[i], ids[j])))
        return g

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n, self.n), dtype=np.int8)
        for e in self.edges:
            u, v = tuple(e)
            i, j = self._index[u], self._index[v]
            a[i, j] = a[j, i] = 1
        return a

    def neighbours(self) -> list[list[int]]:
        nb: list[list[int]] = [[] for _ in range(self.n)]
        for e in self.edges:
            u, v = tuple(e)
            i, j = self._index[u], self._index[v]
            nb[i].append(j)
            nb[j].append(i)
        for row in nb:
            row.sort()
        return nb


class ConnectivityClass(str, enum.Enum):
    LOW = "LowConnected"
    HIGH = "HighConnected"
    DEGENERATE = "Degenerate"


@dataclass(frozen=True)
class WeightMatrix:
    """Binary weight matrix with zero diagonal.

    ``m`` holds the row degrees; ``k`` is the neighbourhood order used to
    build it (``None`` when supplied directly).
    """

    w: np.ndarray
    k: int | None = None

    def __post_init__(self) -> None:
        w = np.asarray(self.w, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise GraphError("weight matrix must be square")
        if not np.all((w == 0) | (w == 1)):
            raise GraphError("weight matrix must be binary")
        if np.any(np.diag(w) != 0):
            raise GraphError("weight matrix must have zero diagonal")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)
        m = w.sum(axis=1).astype(np.int64)
        m.setflags(write=False)
        object.__setattr__(self, "m", m)

    @property
    def n(self) -> int:
        return self.w.shape[0]

    def classes(self) -> list[ConnectivityClass]:
        return [classify_vertex(self, i) for i in range(self.n)]

    def to_csv(self) -> str:
        return "\n".join(",".join(str(int(v)) for v in row) for row in self.w) + "\n"


def load_edge_list(text: str) -> Graph:
    """Parse a ``src,dst`` CSV edge list.

    Duplicate rows (in either orientation) collapse to one edge; vertices are
    numbered by first appearance.  Raises :class:`GraphError` naming the
    offending row (1-based, header is row 1).
    """
    if text.startswith("\ufeff"):
        text = text[1:]
    reader = csv.reader(io.StringIO(text, newline=""))
    try:
        header = next(reader)
    except StopIteration:
        raise GraphError("empty edge list") from None
    if [h.strip() for h in header] != ["src", "dst"]:
        raise GraphError(f"row 1: expected header 'src,dst', got {','.join(header)!r}")
    g = Graph()
    for rowno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 2:
            raise GraphError(f"row {rowno}: expected 2 fields, got {len(row)}")
        u, v = row[0].strip(), row[1].strip()
        if not u or not v:
            raise GraphError(f"row {rowno}: empty vertex id")
        if u == v:
            raise GraphError(f"row {rowno}: self-loop on {u!r}")
        g.add_edge(u, v)
    return g


def bfs_distances(neighbours: list[list[int]], source: int, limit: int | None = None) -> np.ndarray:
    """Hop distances from ``source``; -1 marks unreachable (or beyond ``limit``)."""
    n = len(neighbours)
    dist = np.full(n, -1, dtype=np.int64)
    dist[source] = 0
    queue = deque([source])
    while queue:
        u = queue.popleft()
        du = dist[u]
        if limit is not None and du >= limit:
            continue
        for v in neighbours[u]:
            if dist[v] < 0:
                dist[v] = du + 1
                queue.append(v)
    return dist


def knn_weights(g: Graph, k: int, threads: int = 1) -> WeightMatrix:
    """w_ij = 1 iff the shortest path between i and j has 1..k edges."""
    if int(k) != k or k < 1:
        raise GraphError(f"k must be a positive integer, got {k}")
    n = g.n
    if n == 0:
        raise GraphError("graph has no vertices")
    nb = g.neighbours()

    full = bfs_distances(nb, 0)
    unreachable = np.nonzero(full < 0)[0]
    if unreachable.size:
        raise GraphError(
            f"graph is disconnected: no path between {g.vertices[0]!r} "
            f"and {g.vertices[unreachable[0]]!r}"
        )

    def row(i: int) -> np.ndarray:
        d = bfs_distances(nb, i, limit=k)
        return ((d >= 1) & (d <= k)).astype(float)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(row, range(n)))
    else:
        rows = [row(i) for i in range(n)]
    return WeightMatrix(np.vstack(rows), k=int(k))


def classify_vertex(w: WeightMatrix, i: int) -> ConnectivityClass:
    m = int(w.m[i])
    n = w.n
    if m == 0 or m == n - 1:
        return ConnectivityClass.DEGENERATE
    if m > n / 2:
        return ConnectivityClass.HIGH
    return ConnectivityClass.LOW
