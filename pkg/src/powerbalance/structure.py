"""Combinatorial feasibility of the power equation: support, total support and friends.

The power equation x = A x^÷ has a solution exactly when A has total support, and
the solution is unique when A is fully indecomposable. For a symmetric matrix the
latter means total support plus connectivity on a non-bipartite graph.
"""

from __future__ import annotations

import logging
from collections.abc import Iterator
from dataclasses import dataclass
from enum import StrEnum

import networkx as nx
import numpy as np
import numpy.typing as npt
from scipy import sparse
from scipy.sparse import csgraph

from powerbalance.errors import ConfigError
from powerbalance.generators import to_networkx
from powerbalance.graph import Graph

logger = logging.getLogger(__name__)


BRUTE_FORCE_MAX_NODES = 9
UNMATCHED = -1


@dataclass(frozen=True, kw_only=True)
class StructureReport:
    connected: bool
    bipartite: bool
    has_support: bool
    has_total_support: bool
    fully_indecomposable: bool
    # sigma with A[i, sigma[i]] > 0 for every i, when a positive diagonal exists
    witness: tuple[int, ...] | None
    # unordered pairs (i <= j) lying on no positive diagonal
    violating_edges: tuple[tuple[int, int], ...]


class SupportMode(StrEnum):
    SUPPORT = "support"
    TOTAL = "total"


def is_bipartite(g: Graph) -> bool:
    """A loop is an odd cycle, so any loop makes the graph non-bipartite."""
    return bool(nx.is_bipartite(to_networkx(g)))


def is_irreducible(g: Graph) -> bool:
    n_components, _ = csgraph.connected_components(g.adjacency, directed=False)
    return bool(n_components == 1)


def _perfect_matching(g: Graph) -> npt.NDArray[np.int64] | None:
    # Rows and columns of A are the two sides of the bipartite graph.
    matching = csgraph.maximum_bipartite_matching(
        sparse.csr_matrix(g.adjacency), perm_type="column"
    )
    if np.any(matching == UNMATCHED):
        return None
    return np.asarray(matching, dtype=np.int64)


def has_support(g: Graph) -> tuple[bool, tuple[int, ...] | None]:
    sigma = _perfect_matching(g)
    if sigma is None:
        return False, None
    return True, tuple(int(column) for column in sigma)


def has_total_support(g: Graph) -> tuple[bool, tuple[tuple[int, int], ...]]:
    """Every positive entry must lie on some positive diagonal.

    With one perfect matching sigma fixed, entry (r, c) with c != sigma(r) can be
    swapped in iff row r reaches the row currently holding column c back through
    alternating arcs, i.e. both rows share a strongly connected component of the
    digraph r -> sigma^{-1}(c).
    """
    sigma = _perfect_matching(g)
    all_pairs = tuple((edge.i, edge.j) for edge in g.edges)
    if sigma is None:
        return False, all_pairs

    holder = np.empty_like(sigma)
    holder[sigma] = np.arange(g.n)

    coo = g.adjacency.tocoo()
    rows = np.asarray(coo.row, dtype=np.int64)
    cols = np.asarray(coo.col, dtype=np.int64)
    free = cols != sigma[rows]
    arcs = sparse.csr_matrix(
        (np.ones(int(free.sum())), (rows[free], holder[cols[free]])),
        shape=(g.n, g.n),
    )
    _, component = csgraph.connected_components(
        arcs, directed=True, connection="strong"
    )

    admissible = (~free) | (component[rows] == component[holder[cols]])
    bad = {
        (min(int(r), int(c)), max(int(r), int(c)))
        for r, c, ok in zip(rows, cols, admissible, strict=True)
        if not ok
    }
    violating = tuple(pair for pair in all_pairs if pair in bad)
    return not violating, violating


def is_fully_indecomposable(g: Graph) -> bool:
    if is_bipartite(g):
        return False
    total, _ = has_total_support(g)
    return total and is_irreducible(g)


def _positive_diagonals(g: Graph) -> Iterator[tuple[int, ...]]:
    """Every permutation sigma with A[i, sigma(i)] > 0, by depth-first extension."""
    columns_of = g.neighbors
    chosen: list[int] = []
    used = [False] * g.n

    def extend(row: int) -> Iterator[tuple[int, ...]]:
        if row == g.n:
            yield tuple(chosen)
            return
        for column in columns_of[row]:
            if not used[column]:
                used[column] = True
                chosen.append(column)
                yield from extend(row + 1)
                chosen.pop()
                used[column] = False

    yield from extend(0)


def brute_force_support(g: Graph, mode: SupportMode) -> bool:
    """Decide (total) support by exhaustive enumeration of permutations; a test oracle.

    Permutations are enumerated row by row and abandoned at the first zero entry,
    which visits every positive diagonal without walking all n! candidates.
    """
    if g.n > BRUTE_FORCE_MAX_NODES:
        raise ConfigError(
            f"brute force is limited to {BRUTE_FORCE_MAX_NODES} nodes, got {g.n}"
        )

    positive = {(edge.i, edge.j) for edge in g.edges}
    positive |= {(j, i) for i, j in positive}
    covered: set[tuple[int, int]] = set()
    for sigma in _positive_diagonals(g):
        if mode is SupportMode.SUPPORT:
            return True
        covered.update(enumerate(sigma))
        if covered == positive:
            return True

    return False


def analyze(g: Graph) -> StructureReport:
    support, witness = has_support(g)
    total, violating = has_total_support(g)
    connected = is_irreducible(g)
    bipartite = is_bipartite(g)
    report = StructureReport(
        connected=connected,
        bipartite=bipartite,
        has_support=support,
        has_total_support=total,
        fully_indecomposable=total and connected and not bipartite,
        witness=witness,
        violating_edges=violating,
    )
    logger.info(
        "Structure: connected=%s bipartite=%s support=%s total=%s",
        connected,
        bipartite,
        support,
        total,
    )
    return report
