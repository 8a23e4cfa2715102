"""Correlation and ranking analytics over measure vectors."""

from __future__ import annotations

import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from enum import StrEnum

import numpy as np
import numpy.typing as npt
from scipy import stats as sp_stats

from powerbalance.errors import ConfigError, StatsError
from powerbalance.graph import Vector
from powerbalance.measures import MeasureVector

logger = logging.getLogger(__name__)


DEGENERATE_TOL = 1e-12
MIN_PEARSON_LENGTH = 3
MIN_KENDALL_LENGTH = 2
MIN_PARTIAL_LENGTH = 4


class KendallVariant(StrEnum):
    A = "a"
    B = "b"


class CorrelationMethod(StrEnum):
    PEARSON = "pearson"
    KENDALL = "kendall"
    PARTIAL_PEARSON_GIVEN_DEGREE = "partial_pearson_given_degree"


@dataclass(frozen=True, kw_only=True)
class CorrelationMatrix:
    names: tuple[str, ...]
    coefficients: tuple[tuple[float, ...], ...]
    method: CorrelationMethod

    def coefficient(self, first: str, second: str) -> float:
        return self.coefficients[self.names.index(first)][self.names.index(second)]


@dataclass(frozen=True, kw_only=True)
class RankEntry:
    label: str
    value: float


def _paired(x: npt.ArrayLike, y: npt.ArrayLike, minimum: int) -> tuple[Vector, Vector]:
    first = np.asarray(x, dtype=np.float64)
    second = np.asarray(y, dtype=np.float64)
    if first.shape != second.shape or first.ndim != 1:
        raise StatsError(f"vectors must have equal length, got {first.shape} and {second.shape}")
    if first.size < minimum:
        raise StatsError(f"need at least {minimum} observations, got {first.size}")
    return first, second


def pearson(x: npt.ArrayLike, y: npt.ArrayLike) -> float:
    first, second = _paired(x, y, MIN_PEARSON_LENGTH)
    if np.ptp(first) == 0 or np.ptp(second) == 0:
        raise StatsError("Pearson correlation is undefined for a constant vector")
    coefficient = float(sp_stats.pearsonr(first, second).statistic)
    return max(-1.0, min(1.0, coefficient))


def _kendall_tau_a(first: Vector, second: Vector) -> float:
    # sign products over all pairs i < j: +1 concordant, -1 discordant, 0 tie
    upper = np.triu_indices(first.size, k=1)
    x_order = np.sign(first[:, None] - first[None, :])[upper]
    y_order = np.sign(second[:, None] - second[None, :])[upper]
    pairs = first.size * (first.size - 1) / 2
    return float(np.sum(x_order * y_order) / pairs)


def kendall_tau(
    x: npt.ArrayLike, y: npt.ArrayLike, variant: KendallVariant = KendallVariant.B
) -> float:
    """k = c - d over all pairs (variant a) or with the tie correction (variant b).

    Variant b is nan when either vector is constant.
    """
    first, second = _paired(x, y, MIN_KENDALL_LENGTH)
    if variant is KendallVariant.A:
        return _kendall_tau_a(first, second)
    return float(sp_stats.kendalltau(first, second, variant="b").statistic)


def partial_correlation(x: npt.ArrayLike, y: npt.ArrayLike, z: npt.ArrayLike) -> float:
    """Pearson correlation of x and y with the linear effect of z removed."""
    first, second = _paired(x, y, MIN_PARTIAL_LENGTH)
    _, control = _paired(first, z, MIN_PARTIAL_LENGTH)

    r_xy = pearson(first, second)
    r_xz = pearson(first, control)
    r_yz = pearson(second, control)
    if 1 - abs(r_xz) <= DEGENERATE_TOL or 1 - abs(r_yz) <= DEGENERATE_TOL:
        raise StatsError("the control variable is perfectly correlated with an input")
    return (r_xy - r_xz * r_yz) / math.sqrt((1 - r_xz**2) * (1 - r_yz**2))


def nan_if_undefined(coefficient: Callable[[], float], first: str, second: str) -> float:
    try:
        value = coefficient()
    except StatsError as exc:
        logger.warning("Correlation of %s and %s undefined: %s", first, second, exc)
        return math.nan
    return value


def correlation_matrix(
    measures: Sequence[MeasureVector],
    method: CorrelationMethod,
    control: MeasureVector | None = None,
    variant: KendallVariant = KendallVariant.B,
) -> CorrelationMatrix:
    """Pairwise coefficients; undefined entries (constant vectors) become nan.

    The partial method needs `control`, the degree vector.
    """
    if method is CorrelationMethod.PARTIAL_PEARSON_GIVEN_DEGREE and control is None:
        raise ConfigError("partial correlation needs a control measure")

    def pair(a: MeasureVector, b: MeasureVector) -> float:
        match method:
            case CorrelationMethod.PEARSON:
                return pearson(a.values, b.values)
            case CorrelationMethod.KENDALL:
                value = kendall_tau(a.values, b.values, variant)
                if math.isnan(value):
                    raise StatsError("Kendall tau is undefined for a constant vector")
                return value
            case CorrelationMethod.PARTIAL_PEARSON_GIVEN_DEGREE:
                assert control is not None
                return partial_correlation(a.values, b.values, control.values)

    names = tuple(measure.name for measure in measures)
    rows: list[tuple[float, ...]] = []
    for i, a in enumerate(measures):
        row = []
        for j, b in enumerate(measures):
            if i == j:
                row.append(1.0)
            elif j < i:
                row.append(rows[j][i])
            else:
                row.append(nan_if_undefined(lambda a=a, b=b: pair(a, b), a.name, b.name))
        rows.append(tuple(row))
    return CorrelationMatrix(names=names, coefficients=tuple(rows), method=method)


def top_k(measure: MeasureVector, k: int) -> tuple[RankEntry, ...]:
    if not (1 <= k <= len(measure.labels)):
        raise ConfigError(f"k must lie in [1, {len(measure.labels)}], got {k}")
    order = sorted(
        range(len(measure.labels)),
        key=lambda i: (-float(measure.values[i]), measure.labels[i]),
    )
    return tuple(
        RankEntry(label=measure.labels[i], value=float(measure.values[i]))
        for i in order[:k]
    )


def rank_table(
    measures: Sequence[MeasureVector], k: int
) -> dict[str, tuple[RankEntry, ...]]:
    """Top-k labels per measure, descending by value, ties broken by label."""
    if measures and any(m.labels != measures[0].labels for m in measures):
        raise ConfigError("all measures must cover the same nodes")
    return {measure.name: top_k(measure, k) for measure in measures}
