"""Measure rosters, the matvec benchmark and the parameter sweeps behind the reports."""

from __future__ import annotations

import logging
import multiprocessing
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from functools import partial

from powerbalance.balancing import (
    DEFAULT_TOL,
    Method,
    SolverConfig,
    compute_power,
    solve,
)
from powerbalance.errors import ConfigError, StructureError
from powerbalance.graph import Graph, Perturbation, Vector, make_operator
from powerbalance.measures import (
    MeasureName,
    MeasureVector,
    bonacich,
    degree_centrality,
    eigenvector_centrality,
    nash_power,
    power_measure,
    shapley_power,
    spectral_radius,
)
from powerbalance.models import CAPPED_SUFFIX, MISSING_CELL
from powerbalance.stats import KendallVariant, kendall_tau, nan_if_undefined, pearson
from powerbalance.structure import has_total_support

logger = logging.getLogger(__name__)


DIAGONAL_ALPHA = 0.15
FULL_ALPHA = 0.01
BONACICH_ALPHA = 1.0
BETA_FRACTION = -0.85
DEFAULT_DAMPINGS = (0.01, 0.05, 0.1, 0.2, 0.5, 1.0)
DEFAULT_BETA_FRACTIONS = tuple(round(0.05 * k, 2) for k in range(1, 20))

BenchCell = int | str


@dataclass(frozen=True, kw_only=True)
class BenchColumn:
    name: str
    # None is the power method for eigenvector centrality, the reference cost
    method: Method | None
    perturbation: Perturbation = Perturbation.NONE
    alpha: float | None = None


BENCH_ROSTER = (
    BenchColumn(name="PM", method=None),
    BenchColumn(name="SK", method=Method.SINKHORN_KNOPP),
    BenchColumn(
        name="SK-D",
        method=Method.SINKHORN_KNOPP,
        perturbation=Perturbation.DIAGONAL,
        alpha=DIAGONAL_ALPHA,
    ),
    BenchColumn(
        name="SK-F",
        method=Method.SINKHORN_KNOPP,
        perturbation=Perturbation.FULL,
        alpha=FULL_ALPHA,
    ),
    BenchColumn(name="NM", method=Method.NEWTON),
    BenchColumn(
        name="NM-D",
        method=Method.NEWTON,
        perturbation=Perturbation.DIAGONAL,
        alpha=DIAGONAL_ALPHA,
    ),
)


@dataclass(frozen=True, kw_only=True)
class BenchRow:
    graph: str
    n: int
    m: int
    # one cell per BENCH_ROSTER column: a matvec count, "--" or "<count>*"
    cells: tuple[BenchCell, ...]

    def cell(self, column: str) -> BenchCell:
        return self.cells[[c.name for c in BENCH_ROSTER].index(column)]


@dataclass(frozen=True, kw_only=True)
class DampingPoint:
    alpha: float
    pearson_diagonal: float
    pearson_full: float
    kendall_diagonal: float
    kendall_full: float
    sk_diagonal_matvecs: int
    sk_full_matvecs: int
    newton_diagonal_matvecs: int


@dataclass(frozen=True, kw_only=True)
class BetaPoint:
    fraction: float
    beta: float
    kendall: float
    pearson: float


def all_measures(
    g: Graph,
    *,
    perturbation: Perturbation = Perturbation.DIAGONAL,
    alpha: float | None = DIAGONAL_ALPHA,
    cfg: SolverConfig | None = None,
    bonacich_alpha: float = BONACICH_ALPHA,
    beta_fraction: float = BETA_FRACTION,
) -> tuple[MeasureVector, ...]:
    """Power, centrality, degree, Bonacich, Shapley and Nash for one graph.

    Bonacich uses beta = beta_fraction / r. Nash is left out on graphs with loops.
    """
    if not (-1 < beta_fraction < 1):
        raise ConfigError(f"beta fraction must lie in (-1, 1), got {beta_fraction}")

    op = make_operator(g)
    radius = spectral_radius(op)
    beta = beta_fraction / radius if radius > 0 else 0.0

    measures = [
        power_measure(compute_power(g, perturbation, alpha, cfg)),
        eigenvector_centrality(op),
        degree_centrality(g),
        bonacich(op, bonacich_alpha, beta),
        shapley_power(g),
    ]
    if g.has_loops:
        logger.warning("Skipping Nash power: the graph has loops")
    else:
        measures.append(nash_power(g))
    return tuple(measures)


def _solver_cell(g: Graph, column: BenchColumn, tol: float) -> BenchCell:
    op = make_operator(g, column.perturbation, column.alpha)
    if column.method is None:
        centrality = eigenvector_centrality(op, tol=tol)
        count = int(centrality.params["matvecs"])
        return count if centrality.params["converged"] else f"{count}{CAPPED_SUFFIX}"

    result = solve(op, SolverConfig(method=column.method, tol=tol))
    return result.matvecs if result.converged else f"{result.matvecs}{CAPPED_SUFFIX}"


def bench_graph(name: str, g: Graph, tol: float = DEFAULT_TOL) -> BenchRow:
    """Matvec counts of every roster column; unperturbed solvers need total support."""
    total, _ = has_total_support(g)
    cells: list[BenchCell] = []
    for column in BENCH_ROSTER:
        unperturbed = column.perturbation is Perturbation.NONE
        if column.method is not None and unperturbed and not total:
            cells.append(MISSING_CELL)
            continue
        cells.append(_solver_cell(g, column, tol))

    logger.info("Benchmarked %s: %s", name, cells)
    return BenchRow(graph=name, n=g.n, m=len(g.edges), cells=tuple(cells))


def _bench_entry(tol: float, entry: tuple[str, Graph]) -> BenchRow:
    name, g = entry
    return bench_graph(name, g, tol)


def bench(
    graphs: Sequence[tuple[str, Graph]],
    tol: float = DEFAULT_TOL,
    workers: int = 1,
    initializer: Callable[[], None] | None = None,
) -> tuple[BenchRow, ...]:
    """One row per graph, in input order whatever order the workers finish in."""
    if workers < 1:
        raise ConfigError(f"workers must be at least 1, got {workers}")
    run = partial(_bench_entry, tol)
    if workers == 1 or len(graphs) <= 1:
        return tuple(run(entry) for entry in graphs)

    processes = min(workers, len(graphs))
    logger.info("Benchmarking %d graphs on %d workers", len(graphs), processes)
    with multiprocessing.Pool(processes, initializer=initializer) as pool:
        return tuple(pool.map(run, graphs))


def _association(reference: Vector, other: Vector) -> tuple[float, float]:
    """(Pearson, Kendall tau_b), nan where a vector is constant."""
    r = nan_if_undefined(lambda: pearson(reference, other), "reference", "other")
    tau = kendall_tau(reference, other, KendallVariant.B)
    return r, tau


def _sk(tol: float) -> SolverConfig:
    return SolverConfig(method=Method.SINKHORN_KNOPP, tol=tol)


def damping_sweep(
    g: Graph,
    alphas: Sequence[float] = DEFAULT_DAMPINGS,
    tol: float = DEFAULT_TOL,
) -> tuple[DampingPoint, ...]:
    """Adherence of diagonally and fully perturbed power to the unperturbed one."""
    total, _ = has_total_support(g)
    if not total:
        raise StructureError("the damping sweep compares against unperturbed power")
    original = compute_power(g, cfg=_sk(tol)).power
    newton_cfg = SolverConfig(method=Method.NEWTON, tol=tol)

    points = []
    for alpha in alphas:
        diagonal = compute_power(g, Perturbation.DIAGONAL, alpha, _sk(tol))
        full = compute_power(g, Perturbation.FULL, alpha, _sk(tol))
        newton = compute_power(g, Perturbation.DIAGONAL, alpha, newton_cfg)
        pearson_diagonal, kendall_diagonal = _association(original, diagonal.power)
        pearson_full, kendall_full = _association(original, full.power)
        points.append(
            DampingPoint(
                alpha=alpha,
                pearson_diagonal=pearson_diagonal,
                pearson_full=pearson_full,
                kendall_diagonal=kendall_diagonal,
                kendall_full=kendall_full,
                sk_diagonal_matvecs=diagonal.matvecs,
                sk_full_matvecs=full.matvecs,
                newton_diagonal_matvecs=newton.matvecs,
            )
        )
    return tuple(points)


def beta_sweep(
    g: Graph,
    fractions: Sequence[float] = DEFAULT_BETA_FRACTIONS,
    tol: float = DEFAULT_TOL,
) -> tuple[BetaPoint, ...]:
    """Association of power with Bonacich power for beta = -f / r over fractions f."""
    for fraction in fractions:
        if not (0 < fraction < 1):
            raise ConfigError(f"beta fractions must lie in (0, 1), got {fraction}")
    op = make_operator(g)
    radius = spectral_radius(op)
    if radius == 0:
        raise ConfigError("the beta sweep needs a graph with at least one edge")
    power = compute_power(g, Perturbation.DIAGONAL, DIAGONAL_ALPHA, _sk(tol)).power

    points = []
    for fraction in fractions:
        beta = -fraction / radius
        index = bonacich(op, BONACICH_ALPHA, beta).values
        r, tau = _association(power, index)
        points.append(BetaPoint(fraction=fraction, beta=beta, kendall=tau, pearson=r))
    return tuple(points)


def measure_by_name(
    measures: Sequence[MeasureVector], name: MeasureName
) -> MeasureVector:
    for measure in measures:
        if measure.name == name:
            return measure
    raise ConfigError(f"measure {name.value} was not computed")
