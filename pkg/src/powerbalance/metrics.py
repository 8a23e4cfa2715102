import os
import time
from collections.abc import Generator
from contextlib import contextmanager, suppress
from pathlib import Path


def setup_multiprocess_dir() -> None:
    """Clean up stale metric files from the multiprocess directory.

    This MUST be called BEFORE importing prometheus_client metrics.
    Only files inside the directory are removed, the directory itself may be a
    mounted tmpfs filesystem.
    """
    prometheus_dir = os.environ.get("PROMETHEUS_MULTIPROC_DIR")
    if not prometheus_dir:
        return

    multiproc_path = Path(prometheus_dir)
    if multiproc_path.exists():
        for file in multiproc_path.iterdir():
            with suppress(OSError):
                file.unlink()
    else:
        multiproc_path.mkdir(parents=True, exist_ok=True)


# Bench workers write into the same directory, so stale files of earlier runs
# have to go before the first metric object is created.
setup_multiprocess_dir()

# ruff: noqa: E402 - Must import after setup_multiprocess_dir()
from prometheus_client import (
    CollectorRegistry,
    Counter,
    Histogram,
    generate_latest,
    multiprocess,
)


def get_metrics_output() -> bytes:
    prometheus_dir = os.environ.get("PROMETHEUS_MULTIPROC_DIR")
    if prometheus_dir:
        registry = CollectorRegistry()
        multiprocess.MultiProcessCollector(registry)  # type: ignore[no-untyped-call]
        return generate_latest(registry)
    else:
        from prometheus_client import REGISTRY

        return generate_latest(REGISTRY)


def write_metrics(path: Path) -> None:
    path.write_bytes(get_metrics_output())


MATVECS_TOTAL = Counter(
    "powerbalance_matvecs_total",
    "Total number of counted matrix-vector products",
    labelnames=["perturbation"],
)

SOLVES_TOTAL = Counter(
    "powerbalance_solves_total",
    "Total number of solver invocations",
    labelnames=["method", "status"],
)

SOLVE_LATENCY = Histogram(
    "powerbalance_solve_seconds",
    "Wall time of one solver invocation",
    labelnames=["method"],
    buckets=(0.001, 0.005, 0.01, 0.05, 0.1, 0.5, 1.0, 5.0, 30.0),
)

ERRORS_TOTAL = Counter(
    "powerbalance_errors_total",
    "Total number of errors reported to the caller",
    labelnames=["kind"],
)


@contextmanager
def track_solve(method: str) -> Generator[None]:
    start_time = time.perf_counter()
    try:
        yield
        SOLVES_TOTAL.labels(method=method, status="success").inc()
    except Exception as e:
        SOLVES_TOTAL.labels(method=method, status="error").inc()
        raise e
    finally:
        elapsed = time.perf_counter() - start_time
        SOLVE_LATENCY.labels(method=method).observe(elapsed)
