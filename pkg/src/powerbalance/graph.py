"""Sparse symmetric graphs, edge-list ingestion and counted matrix-vector products."""

from __future__ import annotations

import logging
import math
import threading
from collections.abc import Iterable, Iterator, Sequence
from dataclasses import dataclass
from enum import StrEnum
from functools import cached_property
from typing import TextIO

import numpy as np
import numpy.typing as npt
from scipy import sparse
from scipy.sparse import linalg as spla

from powerbalance.errors import ConfigError, GraphError, ParseError
from powerbalance.metrics import MATVECS_TOTAL

logger = logging.getLogger(__name__)


Vector = npt.NDArray[np.float64]

COMMENT_CHAR = "#"
DEFAULT_WEIGHT = 1.0


@dataclass(frozen=True, kw_only=True)
class Edge:
    """One stored entry of the adjacency matrix, canonicalised so that i <= j."""

    i: int
    j: int
    weight: float

    @property
    def is_loop(self) -> bool:
        return self.i == self.j


@dataclass(frozen=True, kw_only=True)
class Graph:
    """Undirected weighted graph with optional loops.

    Each unordered pair is stored once; symmetry of the adjacency matrix is implied.
    A loop of weight w sits on the diagonal as A[i, i] = w and therefore contributes
    w (not 2w) to the row sum of i.
    """

    labels: tuple[str, ...]
    edges: tuple[Edge, ...]

    def __post_init__(self) -> None:
        if len(set(self.labels)) != len(self.labels):
            raise GraphError("Node labels must be unique!")

        n = len(self.labels)
        seen: set[tuple[int, int]] = set()
        for edge in self.edges:
            if not (0 <= edge.i <= edge.j < n):
                raise GraphError(f"Edge ({edge.i}, {edge.j}) is not canonical for n={n}")
            if not (math.isfinite(edge.weight) and edge.weight > 0):
                raise GraphError(
                    f"Edge ({edge.i}, {edge.j}) has non-positive weight {edge.weight}"
                )
            key = (edge.i, edge.j)
            if key in seen:
                raise GraphError(f"Duplicate edge ({edge.i}, {edge.j})")
            seen.add(key)

    @classmethod
    def from_edges(
        cls,
        labels: Sequence[str],
        edges: Iterable[tuple[int, int] | tuple[int, int, float]],
    ) -> Graph:
        canonical: list[Edge] = []
        for entry in edges:
            i, j, *rest = entry
            weight = float(rest[0]) if rest else DEFAULT_WEIGHT
            canonical.append(Edge(i=min(i, j), j=max(i, j), weight=weight))
        canonical.sort(key=lambda edge: (edge.i, edge.j))
        return cls(labels=tuple(labels), edges=tuple(canonical))

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def has_loops(self) -> bool:
        return any(edge.is_loop for edge in self.edges)

    @property
    def is_weighted(self) -> bool:
        return any(edge.weight != DEFAULT_WEIGHT for edge in self.edges)

    @cached_property
    def adjacency(self) -> sparse.csr_array:
        rows: list[int] = []
        cols: list[int] = []
        data: list[float] = []
        for edge in self.edges:
            rows.append(edge.i)
            cols.append(edge.j)
            data.append(edge.weight)
            if not edge.is_loop:
                rows.append(edge.j)
                cols.append(edge.i)
                data.append(edge.weight)
        matrix = sparse.coo_array(
            (np.asarray(data, dtype=np.float64), (rows, cols)),
            shape=(self.n, self.n),
        )
        return matrix.tocsr()

    @cached_property
    def neighbors(self) -> tuple[tuple[int, ...], ...]:
        """Adjacency lists in ascending index order, loops included."""
        adjacent: list[list[int]] = [[] for _ in range(self.n)]
        for edge in self.edges:
            adjacent[edge.i].append(edge.j)
            if not edge.is_loop:
                adjacent[edge.j].append(edge.i)
        return tuple(tuple(sorted(row)) for row in adjacent)

    def index_of(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError as exc:
            raise GraphError(f"Unknown node label {label!r}") from exc

    def subgraph(self, nodes: Iterable[int]) -> Graph:
        """Induced subgraph; nodes keep their relative order."""
        keep = sorted(set(nodes))
        position = {old: new for new, old in enumerate(keep)}
        edges = [
            (position[edge.i], position[edge.j], edge.weight)
            for edge in self.edges
            if edge.i in position and edge.j in position
        ]
        return Graph.from_edges([self.labels[i] for i in keep], edges)


def degrees(g: Graph) -> Vector:
    return np.asarray(g.adjacency.sum(axis=1), dtype=np.float64).ravel()


def _parse_weight(token: str, lineno: int) -> float:
    try:
        weight = float(token)
    except ValueError as exc:
        raise ParseError(f"line {lineno}: weight {token!r} is not a number") from exc
    if not math.isfinite(weight) or weight <= 0:
        raise ParseError(f"line {lineno}: weight {token!r} must be positive")
    return weight


def _numbered_lines(source: TextIO) -> Iterator[tuple[int, str]]:
    """Lines with their 1-based numbers; undecodable bytes become a ParseError.

    Streams opened with errors="surrogateescape" keep the bad bytes as lone
    surrogates, which pins the error to its line.
    """
    lineno = 0
    try:
        for lineno, raw in enumerate(source, start=1):
            try:
                raw.encode("utf-8")
            except UnicodeEncodeError as exc:
                raise ParseError(f"line {lineno}: not valid UTF-8") from exc
            yield lineno, raw
    except UnicodeDecodeError as exc:
        raise ParseError(f"line {lineno + 1}: not valid UTF-8") from exc


def load_edge_list(source: TextIO) -> Graph:
    """Read `u v [w]` lines; a line holding a single label declares a node.

    Nodes are numbered in order of first appearance.
    """
    index: dict[str, int] = {}
    entries: dict[tuple[int, int], float] = {}

    def intern(label: str) -> int:
        return index.setdefault(label, len(index))

    for lineno, raw in _numbered_lines(source):
        tokens = raw.split(COMMENT_CHAR, 1)[0].split()
        match tokens:
            case []:
                continue
            case [label]:
                intern(label)
                continue
            case [u, v]:
                weight = DEFAULT_WEIGHT
            case [u, v, w]:
                weight = _parse_weight(w, lineno)
            case _:
                raise ParseError(
                    f"line {lineno}: expected 'u v [w]', got {len(tokens)} tokens"
                )

        i, j = intern(u), intern(v)
        key = (min(i, j), max(i, j))
        if key in entries:
            raise ParseError(f"line {lineno}: duplicate edge {u} {v}")
        entries[key] = weight

    if not index:
        raise ParseError("empty input: no nodes or edges found")

    labels = sorted(index, key=index.__getitem__)
    graph = Graph.from_edges(labels, [(i, j, w) for (i, j), w in entries.items()])
    logger.info("Loaded graph with %d nodes and %d edges", graph.n, len(graph.edges))
    return graph


def dump_edge_list(g: Graph, sink: TextIO) -> None:
    # Declaring every node up front pins the first-appearance order on reload.
    for label in g.labels:
        sink.write(f"{label}\n")
    for edge in g.edges:
        sink.write(f"{g.labels[edge.i]} {g.labels[edge.j]} {edge.weight!r}\n")


class Perturbation(StrEnum):
    NONE = "none"
    DIAGONAL = "diag"
    FULL = "full"


class LinearOperator:
    """Matrix-vector view of A, A + alpha*I or A + alpha*E with a product counter.

    The full perturbation is applied as a rank-one correction, never densified. One
    `apply` is one counted product whatever the perturbation. The counter is guarded
    by a lock, so an operator may be shared between threads.
    """

    def __init__(
        self,
        graph: Graph,
        perturbation: Perturbation = Perturbation.NONE,
        alpha: float | None = None,
    ) -> None:
        if perturbation is Perturbation.NONE:
            if alpha is not None:
                raise ConfigError("alpha is only meaningful with a perturbation")
        elif alpha is None or not math.isfinite(alpha) or alpha <= 0:
            raise ConfigError(f"alpha must be positive, got {alpha}")

        self.graph = graph
        self.perturbation = perturbation
        self.alpha = 0.0 if alpha is None else float(alpha)
        self._matrix = graph.adjacency
        self._matvecs = 0
        self._lock = threading.Lock()
        self._metric = MATVECS_TOTAL.labels(perturbation=perturbation.value)

    @property
    def n(self) -> int:
        return self.graph.n

    @property
    def matvecs(self) -> int:
        return self._matvecs

    def reset_counter(self) -> None:
        with self._lock:
            self._matvecs = 0

    def apply(self, v: npt.ArrayLike) -> Vector:
        vector = np.asarray(v, dtype=np.float64)
        if vector.shape != (self.n,):
            raise GraphError(
                f"Vector of shape {vector.shape} does not match operator of size {self.n}"
            )

        result: Vector = np.asarray(self._matrix @ vector, dtype=np.float64)
        match self.perturbation:
            case Perturbation.DIAGONAL:
                result = result + self.alpha * vector
            case Perturbation.FULL:
                result = result + self.alpha * vector.sum()
            case Perturbation.NONE:
                pass

        with self._lock:
            self._matvecs += 1
        self._metric.inc()
        return result

    def diagonal(self) -> Vector:
        diag: Vector = np.asarray(self._matrix.diagonal(), dtype=np.float64)
        if self.perturbation is not Perturbation.NONE:
            diag = diag + self.alpha
        return diag

    def effective_graph(self) -> Graph:
        """The perturbed matrix written out as a graph (dense for full perturbation)."""
        g = self.graph
        match self.perturbation:
            case Perturbation.NONE:
                return g
            case Perturbation.DIAGONAL:
                weights = {(edge.i, edge.j): edge.weight for edge in g.edges}
                for i in range(g.n):
                    weights[(i, i)] = weights.get((i, i), 0.0) + self.alpha
            case Perturbation.FULL:
                weights = {
                    (i, j): self.alpha for i in range(g.n) for j in range(i, g.n)
                }
                for edge in g.edges:
                    weights[(edge.i, edge.j)] += edge.weight
        return Graph.from_edges(g.labels, [(i, j, w) for (i, j), w in weights.items()])

    def as_scipy(self) -> spla.LinearOperator:
        """Expose `apply` to scipy's Krylov solvers; each of their products is counted."""
        return spla.LinearOperator(
            shape=(self.n, self.n),
            matvec=lambda x: self.apply(np.ravel(x)),
            dtype=np.float64,
        )

    def __repr__(self) -> str:
        return (
            f"LinearOperator(n={self.n}, perturbation={self.perturbation.value}, "
            f"alpha={self.alpha})"
        )


def make_operator(
    g: Graph,
    perturbation: Perturbation = Perturbation.NONE,
    alpha: float | None = None,
) -> LinearOperator:
    return LinearOperator(g, perturbation, alpha)
