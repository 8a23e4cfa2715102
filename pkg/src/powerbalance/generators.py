"""Archetype graphs, seeded random graphs and networkx conversions."""

from __future__ import annotations

import logging
import random
import string

import networkx as nx

from powerbalance.errors import ConfigError, GraphError
from powerbalance.graph import Graph

logger = logging.getLogger(__name__)


def letter_labels(n: int) -> list[str]:
    """A, B, ..., Z, then A1, B1, ... so that small archetypes read like the literature."""
    letters = string.ascii_uppercase
    return [
        letters[i % len(letters)] + (str(i // len(letters)) if i >= len(letters) else "")
        for i in range(n)
    ]


def path_graph(n: int) -> Graph:
    if n < 1:
        raise ConfigError("a path needs at least one node")
    return Graph.from_edges(letter_labels(n), [(i, i + 1) for i in range(n - 1)])


def star_graph(leaves: int) -> Graph:
    """Center labelled `C`, leaves `L1`, `L2`, ..."""
    labels = ["C", *(f"L{k}" for k in range(1, leaves + 1))]
    return Graph.from_edges(labels, [(0, k) for k in range(1, leaves + 1)])


def complete_graph(n: int) -> Graph:
    return Graph.from_edges(
        letter_labels(n), [(i, j) for i in range(n) for j in range(i + 1, n)]
    )


def disjoint_union(first: Graph, second: Graph, suffix: str = "'") -> Graph:
    labels = list(first.labels)
    taken = set(labels)
    for label in second.labels:
        new_label = label
        while new_label in taken:
            new_label += suffix
        labels.append(new_label)
        taken.add(new_label)

    offset = first.n
    edges = [(edge.i, edge.j, edge.weight) for edge in first.edges]
    edges += [(edge.i + offset, edge.j + offset, edge.weight) for edge in second.edges]
    return Graph.from_edges(labels, edges)


def to_networkx(g: Graph) -> nx.Graph:
    nx_graph = nx.Graph()
    nx_graph.add_nodes_from(range(g.n))
    nx_graph.add_weighted_edges_from((edge.i, edge.j, edge.weight) for edge in g.edges)
    return nx_graph


def from_networkx(nx_graph: nx.Graph, labels: list[str] | None = None) -> Graph:
    nodes = list(nx_graph.nodes)
    position = {node: k for k, node in enumerate(nodes)}
    if labels is None:
        labels = [str(node) for node in nodes]
    edges = [
        (position[u], position[v], float(data.get("weight", 1.0)))
        for u, v, data in nx_graph.edges(data=True)
    ]
    return Graph.from_edges(labels, edges)


def random_connected_graph(n: int, m: int, seed: int) -> Graph:
    """Connected graph with n nodes and m edges, driven by one seeded stream.

    A uniform random spanning tree (from a random Prüfer sequence) is topped up with
    m - n + 1 further edges drawn uniformly from the pairs it does not use yet, so
    every m from n - 1 up to the complete graph is reachable.
    """
    if n < 1:
        raise ConfigError("n must be positive")
    pairs = n * (n - 1) // 2
    if not (n - 1 <= m <= pairs):
        raise ConfigError(f"a connected simple graph on {n} nodes cannot have {m} edges")

    rng = random.Random(seed)  # noqa: S311 - reproducible sampling, not cryptography
    tree = (
        nx.from_prufer_sequence([rng.randrange(n) for _ in range(n - 2)])
        if n > 1
        else nx.empty_graph(1)
    )
    edges = {(min(u, v), max(u, v)) for u, v in tree.edges}
    extra = m - len(edges)
    if extra > (pairs - len(edges)) // 2:
        unused = [
            (i, j) for i in range(n) for j in range(i + 1, n) if (i, j) not in edges
        ]
        edges.update(rng.sample(unused, extra))
    else:
        while len(edges) < m:
            i, j = rng.sample(range(n), 2)
            edges.add((min(i, j), max(i, j)))

    logger.debug("Random connected graph with %d nodes and %d edges", n, m)
    return Graph.from_edges([f"v{k}" for k in range(n)], sorted(edges))


def largest_biconnected_component(g: Graph) -> Graph:
    """Largest biconnected component (ties: the one holding the smallest index).

    Loops are kept on the retained nodes.
    """
    components = [
        sorted(component)
        for component in nx.biconnected_components(to_networkx(g))
    ]
    if not components:
        raise GraphError("the graph has no biconnected component")
    best = min(components, key=lambda component: (-len(component), component[0]))
    logger.info("Largest biconnected component keeps %d of %d nodes", len(best), g.n)
    return g.subgraph(best)
