import numpy as np
import pytest

from powerbalance.generators import (
    complete_graph,
    disjoint_union,
    path_graph,
    star_graph,
)
from powerbalance.graph import Graph

LOOP_PROBABILITY = 0.1


def random_small_graph(rng: np.random.Generator, max_nodes: int = 8) -> Graph:
    """Erdos-Renyi graph with random density and occasional loops; may be disconnected."""
    n = int(rng.integers(1, max_nodes + 1))
    density = float(rng.uniform(0.2, 0.8))
    edges = [
        (i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < density
    ]
    edges += [(i, i) for i in range(n) if rng.random() < LOOP_PROBABILITY]
    return Graph.from_edges([f"n{k}" for k in range(n)], edges)


def barbell() -> Graph:
    """Two K5 joined by two edges: fully indecomposable with a narrow bottleneck."""
    clique = [(i, j) for i in range(5) for j in range(i + 1, 5)]
    edges = clique + [(i + 5, j + 5) for i, j in clique] + [(0, 5), (1, 6)]
    return Graph.from_edges([f"v{k}" for k in range(10)], edges)


@pytest.fixture
def p2() -> Graph:
    return path_graph(2)


@pytest.fixture
def p3() -> Graph:
    return path_graph(3)


@pytest.fixture
def p4() -> Graph:
    return path_graph(4)


@pytest.fixture
def p5() -> Graph:
    return path_graph(5)


@pytest.fixture
def k3() -> Graph:
    return complete_graph(3)


@pytest.fixture
def star() -> Graph:
    return star_graph(3)


@pytest.fixture
def triangle_and_edge() -> Graph:
    return disjoint_union(complete_graph(3), path_graph(2), suffix="2")
