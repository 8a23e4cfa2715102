import argparse
import logging
import math
import os
import sys
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field, fields, replace
from enum import StrEnum
from functools import partial
from pathlib import Path
from typing import Any

from powerbalance.balancing import (
    DEFAULT_TOL,
    Method,
    Normalization,
    Preconditioner,
    SolverConfig,
    compute_power,
)
from powerbalance.errors import (
    IO_ERROR_EXIT_CODE,
    IO_ERROR_KIND,
    ConfigError,
    PowerBalanceError,
)
from powerbalance.experiments import (
    BENCH_ROSTER,
    BETA_FRACTION,
    BONACICH_ALPHA,
    DIAGONAL_ALPHA,
    FULL_ALPHA,
    all_measures,
    bench,
    beta_sweep,
    damping_sweep,
    measure_by_name,
)
from powerbalance.generators import largest_biconnected_component, random_connected_graph
from powerbalance.graph import Graph, Perturbation, load_edge_list
from powerbalance.measures import MeasureName, MeasureVector, power_measure
from powerbalance.metrics import ERRORS_TOTAL, write_metrics
from powerbalance.models import Cell, OutputFormat, Report, json_dumps, render
from powerbalance.stats import (
    CorrelationMatrix,
    CorrelationMethod,
    KendallVariant,
    correlation_matrix,
    rank_table,
)
from powerbalance.structure import analyze

logger = logging.getLogger(__name__)


class Command(StrEnum):
    ANALYZE = "analyze"
    POWER = "power"
    MEASURES = "measures"
    COMPARE = "compare"
    BENCH = "bench"
    SWEEP = "sweep"


class SweepKind(StrEnum):
    DAMPING = "damping"
    BETA = "beta"


DEFAULT_ALPHA = {Perturbation.DIAGONAL: DIAGONAL_ALPHA, Perturbation.FULL: FULL_ALPHA}


@dataclass(frozen=True, kw_only=True)
class GeneratorSpec:
    n: int
    m: int
    seed: int
    replicates: int = 1


@dataclass(frozen=True, kw_only=True)
class RunConfig:
    command: Command
    inputs: tuple[Path, ...] = ()
    generate: GeneratorSpec | None = None
    biconnected: bool = False
    # None picks the per-command default: none for power, diag elsewhere
    perturbation: Perturbation | None = None
    alpha: float | None = None
    solver: SolverConfig = field(default_factory=SolverConfig)
    bonacich_alpha: float = BONACICH_ALPHA
    beta_fraction: float = BETA_FRACTION
    output_format: OutputFormat = OutputFormat.TEXT
    top: int | None = None
    force: bool = False
    kendall_variant: KendallVariant = KendallVariant.B
    sweep_kind: SweepKind = SweepKind.DAMPING
    workers: int = 1
    log_level: str = "WARNING"

    def __post_init__(self) -> None:
        if not self.inputs and self.generate is None:
            raise ConfigError("give at least one --input or --generate N M SEED")
        if self.command is not Command.BENCH and self.graph_count != 1:
            raise ConfigError(f"{self.command.value} works on exactly one graph")
        if self.perturbation is Perturbation.NONE and self.alpha is not None:
            raise ConfigError("--alpha needs --perturb diag or --perturb full")
        if not (-1 < self.beta_fraction < 1):
            raise ConfigError(
                f"beta fraction must lie in (-1, 1), got {self.beta_fraction}"
            )

    @property
    def graph_count(self) -> int:
        generated = self.generate.replicates if self.generate is not None else 0
        return len(self.inputs) + generated

    def resolved_perturbation(self) -> tuple[Perturbation, float | None]:
        default = (
            Perturbation.NONE if self.command is Command.POWER else Perturbation.DIAGONAL
        )
        perturbation = self.perturbation or default
        if perturbation is Perturbation.NONE:
            return perturbation, None
        return perturbation, self.alpha or DEFAULT_ALPHA[perturbation]


def load_graphs(cfg: RunConfig) -> list[tuple[str, Graph]]:
    graphs = []
    for path in cfg.inputs:
        with path.open(encoding="utf-8", errors="surrogateescape") as source:
            graphs.append((str(path), load_edge_list(source)))
    if cfg.generate is not None:
        spec = cfg.generate
        for seed in range(spec.seed, spec.seed + spec.replicates):
            name = f"G({spec.n},{spec.m})#{seed}"
            graphs.append((name, random_connected_graph(spec.n, spec.m, seed)))
    if cfg.biconnected:
        graphs = [(name, largest_biconnected_component(g)) for name, g in graphs]
    return graphs


def _single_graph(cfg: RunConfig) -> tuple[str, Graph]:
    (entry,) = load_graphs(cfg)
    return entry


def _graph_metadata(name: str, g: Graph) -> dict[str, Any]:
    return {"graph": name, "n": g.n, "m": len(g.edges)}


def _rank_report(
    command: Command, measures: Sequence[MeasureVector], k: int, metadata: dict[str, Any]
) -> Report:
    table = rank_table(measures, k)
    rows = tuple(
        (name, rank, entry.label, entry.value)
        for name, entries in table.items()
        for rank, entry in enumerate(entries, start=1)
    )
    return Report(
        command=command.value,
        columns=("measure", "rank", "label", "value"),
        rows=rows,
        metadata=metadata,
    )


def run_analyze(cfg: RunConfig) -> Report:
    name, g = _single_graph(cfg)
    report = analyze(g)
    verdicts: dict[str, bool] = {
        "irreducible": report.connected,
        "bipartite": report.bipartite,
        "has_support": report.has_support,
        "has_total_support": report.has_total_support,
        "fully_indecomposable": report.fully_indecomposable,
        "has_loops": g.has_loops,
    }
    witness = (
        [(g.labels[i], g.labels[column]) for i, column in enumerate(report.witness)]
        if report.witness is not None
        else None
    )
    violating = [(g.labels[i], g.labels[j]) for i, j in report.violating_edges]

    # tables flatten the pair lists; JSON keeps them as arrays of label pairs
    rows: tuple[tuple[Cell, ...], ...] = (
        *verdicts.items(),
        ("witness", _pairs_cell(witness)),
        ("violating_edges", _pairs_cell(violating)),
    )
    metadata = _graph_metadata(name, g)
    return Report(
        command=cfg.command.value,
        columns=("property", "value"),
        rows=rows,
        metadata=metadata,
        document=metadata
        | verdicts
        | {"witness": witness, "violating_edges": violating},
    )


def _pairs_cell(pairs: list[tuple[str, str]] | None) -> str | None:
    if pairs is None:
        return None
    return " ".join(f"({u},{v})" for u, v in pairs)


def run_power(cfg: RunConfig) -> Report:
    name, g = _single_graph(cfg)
    perturbation, alpha = cfg.resolved_perturbation()
    solver = replace(cfg.solver, strict=not cfg.force)
    result = compute_power(g, perturbation, alpha, solver)

    metadata = _graph_metadata(name, g) | {
        "method": result.method,
        "perturbation": result.perturbation,
        "alpha": result.alpha,
        "normalization": result.normalization,
        "residual": result.residual,
        "outer_iterations": result.outer_iterations,
        "matvecs": result.matvecs,
        "converged": result.converged,
    }
    if cfg.top is not None:
        return _rank_report(cfg.command, [power_measure(result)], cfg.top, metadata)

    rows = tuple(
        (label, float(x), float(d))
        for label, x, d in zip(result.labels, result.power, result.scaling, strict=True)
    )
    power = [
        {"label": label, "value": float(x)}
        for label, x in zip(result.labels, result.power, strict=True)
    ]
    return Report(
        command=cfg.command.value,
        columns=("label", "power", "scaling"),
        rows=rows,
        metadata=metadata,
        document=metadata | {"power": power},
    )


def _measures(cfg: RunConfig, g: Graph) -> tuple[MeasureVector, ...]:
    perturbation, alpha = cfg.resolved_perturbation()
    return all_measures(
        g,
        perturbation=perturbation,
        alpha=alpha,
        cfg=replace(cfg.solver, strict=not cfg.force),
        bonacich_alpha=cfg.bonacich_alpha,
        beta_fraction=cfg.beta_fraction,
    )


def run_measures(cfg: RunConfig) -> Report:
    name, g = _single_graph(cfg)
    measures = _measures(cfg, g)
    metadata = _graph_metadata(name, g) | {
        "params": {measure.name: dict(measure.params) for measure in measures}
    }
    if cfg.top is not None:
        return _rank_report(cfg.command, measures, cfg.top, metadata)

    rows = tuple(
        (label, *(float(measure.values[i]) for measure in measures))
        for i, label in enumerate(g.labels)
    )
    return Report(
        command=cfg.command.value,
        columns=("label", *(measure.name for measure in measures)),
        rows=rows,
        metadata=metadata,
    )


def _matrix_rows(
    matrix: CorrelationMatrix, names: Sequence[str]
) -> list[tuple[Cell, ...]]:
    rows: list[tuple[Cell, ...]] = []
    for first in matrix.names:
        cells: list[Cell] = [matrix.method.value, first]
        cells += [
            matrix.coefficient(first, second) if second in matrix.names else None
            for second in names
        ]
        rows.append(tuple(cells))
    return rows


def run_compare(cfg: RunConfig) -> Report:
    """Kendall, Pearson and partial-given-degree matrices in one table.

    The partial matrix has no degree row or column.
    """
    name, g = _single_graph(cfg)
    measures = _measures(cfg, g)
    degree = measure_by_name(measures, MeasureName.DEGREE)
    names = [measure.name for measure in measures]

    matrices = [
        correlation_matrix(
            measures, CorrelationMethod.KENDALL, variant=cfg.kendall_variant
        ),
        correlation_matrix(measures, CorrelationMethod.PEARSON),
        correlation_matrix(
            [m for m in measures if m.name != MeasureName.DEGREE],
            CorrelationMethod.PARTIAL_PEARSON_GIVEN_DEGREE,
            control=degree,
        ),
    ]
    rows = [row for matrix in matrices for row in _matrix_rows(matrix, names)]
    return Report(
        command=cfg.command.value,
        columns=("method", "measure", *names),
        rows=tuple(rows),
        metadata=_graph_metadata(name, g) | {"kendall_variant": cfg.kendall_variant},
    )


def run_bench(cfg: RunConfig) -> Report:
    graphs = load_graphs(cfg)
    rows = bench(
        graphs,
        tol=cfg.solver.tol,
        workers=cfg.workers,
        initializer=partial(setup_logging, cfg.log_level),
    )
    metadata: dict[str, Any] = {"tol": cfg.solver.tol}
    if cfg.generate is not None:
        metadata["generate"] = cfg.generate
    return Report(
        command=cfg.command.value,
        columns=("graph", "n", "m", *(column.name for column in BENCH_ROSTER)),
        rows=tuple((row.graph, row.n, row.m, *row.cells) for row in rows),
        metadata=metadata,
    )


def run_sweep(cfg: RunConfig) -> Report:
    name, g = _single_graph(cfg)
    tol = cfg.solver.tol
    points: Sequence[Any]
    match cfg.sweep_kind:
        case SweepKind.DAMPING:
            points = damping_sweep(g, tol=tol)
        case SweepKind.BETA:
            points = beta_sweep(g, tol=tol)

    columns = tuple(f.name for f in fields(points[0])) if points else ()
    return Report(
        command=cfg.command.value,
        columns=columns,
        rows=tuple(tuple(getattr(point, c) for c in columns) for point in points),
        metadata=_graph_metadata(name, g) | {"kind": cfg.sweep_kind},
    )


RUNNERS: dict[Command, Callable[[RunConfig], Report]] = {
    Command.ANALYZE: run_analyze,
    Command.POWER: run_power,
    Command.MEASURES: run_measures,
    Command.COMPARE: run_compare,
    Command.BENCH: run_bench,
    Command.SWEEP: run_sweep,
}


def positive_integer(value: str) -> int:
    try:
        ivalue = int(value)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"{value} is not a valid integer") from exc
    if ivalue < 1:
        raise argparse.ArgumentTypeError(f"{value} must be at least 1")
    return ivalue


def positive_float(value: str) -> float:
    try:
        fvalue = float(value)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"{value} is not a valid number") from exc
    if not (math.isfinite(fvalue) and fvalue > 0):
        raise argparse.ArgumentTypeError(f"{value} must be a positive number")
    return fvalue


def beta_fraction(value: str) -> float:
    try:
        fvalue = float(value)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"{value} is not a valid number") from exc
    if not (-1 < fvalue < 1):
        raise argparse.ArgumentTypeError(f"{value} must lie strictly between -1 and 1")
    return fvalue


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--input",
        type=Path,
        action="append",
        default=[],
        help="Edge-list file; repeat for several graphs",
    )
    common.add_argument(
        "--generate",
        type=int,
        nargs=3,
        metavar=("N", "M", "SEED"),
        help="Use a seeded random connected graph with N nodes and M edges",
    )
    common.add_argument(
        "--replicates",
        type=positive_integer,
        default=1,
        help="Number of generated graphs, seeds SEED, SEED+1, ... (default: 1)",
    )
    common.add_argument(
        "--biconnected",
        action="store_true",
        help="Restrict every graph to its largest biconnected component",
    )
    common.add_argument(
        "--format",
        type=OutputFormat,
        choices=list(OutputFormat),
        default=OutputFormat(os.getenv("POWERBALANCE_FORMAT", "text")),
        help="Output format (default: text, env: POWERBALANCE_FORMAT)",
    )
    common.add_argument(
        "--perturb",
        type=Perturbation,
        choices=list(Perturbation),
        help="Perturbation of A (default: none for power, diag otherwise)",
    )
    common.add_argument(
        "--alpha",
        type=positive_float,
        help="Damping of the perturbation (default: 0.15 diag, 0.01 full)",
    )
    common.add_argument(
        "--method",
        type=Method,
        choices=list(Method),
        default=Method(os.getenv("POWERBALANCE_METHOD", "sk")),
        help="Balancing solver (default: sk, env: POWERBALANCE_METHOD)",
    )
    common.add_argument(
        "--tol",
        type=positive_float,
        default=positive_float(os.getenv("POWERBALANCE_TOL", str(DEFAULT_TOL))),
        help="Balance residual tolerance (default: 1e-8, env: POWERBALANCE_TOL)",
    )
    common.add_argument(
        "--max-iter",
        type=positive_integer,
        help="Outer iteration cap (default: 50000 for sk, 200 for newton)",
    )
    common.add_argument(
        "--preconditioner",
        type=Preconditioner,
        choices=list(Preconditioner),
        default=Preconditioner.JACOBI,
        help="Preconditioner of the Newton inner solve (default: jacobi)",
    )
    common.add_argument(
        "--normalization",
        type=Normalization,
        choices=list(Normalization),
        default=Normalization.GEOMETRIC_MEAN,
        help="Scale of the reported power (default: geometric_mean)",
    )
    common.add_argument(
        "--bonacich-alpha",
        type=float,
        default=BONACICH_ALPHA,
        help="Bonacich alpha (default: 1)",
    )
    common.add_argument(
        "--beta-fraction",
        type=beta_fraction,
        default=BETA_FRACTION,
        help="Bonacich beta as a fraction of 1/r (default: -0.85)",
    )
    common.add_argument(
        "--kendall",
        type=KendallVariant,
        choices=list(KendallVariant),
        default=KendallVariant.B,
        help="Kendall tau variant (default: b)",
    )
    common.add_argument(
        "--top", type=positive_integer, help="Report only the top K nodes per measure"
    )
    common.add_argument(
        "--force",
        action="store_true",
        help="Solve unperturbed even without total support",
    )
    common.add_argument(
        "--metrics-file",
        type=Path,
        help="Write Prometheus metrics to this file when done",
    )
    common.add_argument(
        "--log-level",
        default=os.getenv("POWERBALANCE_LOG_LEVEL", "WARNING"),
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Log level on stderr (default: WARNING, env: POWERBALANCE_LOG_LEVEL)",
    )
    return common


def parse_args(argv: Sequence[str] | None = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        description="Network power via matrix balancing, compared with classic measures"
    )
    common = _common_parser()
    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser(
        Command.ANALYZE, parents=[common], help="Structural feasibility verdicts"
    )
    commands.add_parser(Command.POWER, parents=[common], help="Solve x = A x^-1")
    commands.add_parser(
        Command.MEASURES, parents=[common], help="Power next to the other measures"
    )
    commands.add_parser(
        Command.COMPARE, parents=[common], help="Correlation matrices of all measures"
    )
    bench_parser = commands.add_parser(
        Command.BENCH, parents=[common], help="Matvec counts per solver"
    )
    bench_parser.add_argument(
        "--workers",
        type=positive_integer,
        default=positive_integer(os.getenv("POWERBALANCE_WORKERS", "1")),
        help="Number of worker processes (default: 1, env: POWERBALANCE_WORKERS)",
    )
    sweep_parser = commands.add_parser(
        Command.SWEEP, parents=[common], help="Damping or Bonacich beta sweep"
    )
    sweep_parser.add_argument(
        "--kind",
        type=SweepKind,
        choices=list(SweepKind),
        default=SweepKind.DAMPING,
        help="Swept parameter (default: damping)",
    )
    return parser.parse_args(argv)


def build_run_config(args: argparse.Namespace) -> RunConfig:
    generate = None
    if args.generate is not None:
        n, m, seed = args.generate
        generate = GeneratorSpec(n=n, m=m, seed=seed, replicates=args.replicates)
    return RunConfig(
        command=Command(args.command),
        inputs=tuple(args.input),
        generate=generate,
        biconnected=args.biconnected,
        perturbation=args.perturb,
        alpha=args.alpha,
        solver=SolverConfig(
            method=args.method,
            tol=args.tol,
            max_outer=args.max_iter,
            normalization=args.normalization,
            preconditioner=args.preconditioner,
        ),
        bonacich_alpha=args.bonacich_alpha,
        beta_fraction=args.beta_fraction,
        output_format=args.format,
        top=args.top,
        force=args.force,
        kendall_variant=args.kendall,
        sweep_kind=getattr(args, "kind", SweepKind.DAMPING),
        workers=getattr(args, "workers", 1),
        log_level=args.log_level,
    )


def setup_logging(level: str = "WARNING") -> None:
    logging.basicConfig(
        level=level,
        format="[{levelname:<8}] {asctime} [PID:{process}] ({name}.{funcName}) {message}",
        style="{",
        datefmt="%Y-%m-%d %H:%M:%S",
        stream=sys.stderr,
    )


def _report_error(kind: str, message: str) -> None:
    ERRORS_TOTAL.labels(kind=kind).inc()
    sys.stderr.write(json_dumps({"error": kind, "message": message}) + "\n")


def main(argv: Sequence[str] | None = None) -> int:
    args = parse_args(argv)
    setup_logging(args.log_level)
    metrics_file: Path | None = args.metrics_file

    try:
        cfg = build_run_config(args)
        report = RUNNERS[cfg.command](cfg)
        sys.stdout.write(render(report, cfg.output_format))
        return 0
    except PowerBalanceError as exc:
        logger.error("%s failed: %s", args.command, exc)
        _report_error(exc.kind, str(exc))
        return exc.exit_code
    except OSError as exc:
        logger.error("%s failed: %s", args.command, exc)
        _report_error(IO_ERROR_KIND, str(exc))
        return IO_ERROR_EXIT_CODE
    finally:
        if metrics_file is not None:
            write_metrics(metrics_file)


if __name__ == "__main__":
    sys.exit(main())
