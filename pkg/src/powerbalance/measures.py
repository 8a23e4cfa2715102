"""Measures that power is compared against.

Eigenvector centrality, spectral radius, the Bonacich index, Shapley power (sum of
reciprocal neighbour degrees) and Nash bargaining power, plus degree.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Iterator, Mapping
from dataclasses import dataclass, field
from enum import StrEnum

import numpy as np
import numpy.typing as npt
from scipy.sparse import linalg as spla

from powerbalance.balancing import BalanceResult, newton_first_iterate, sinkhorn_step
from powerbalance.errors import ConfigError, DivergenceError, DomainError, GraphError
from powerbalance.graph import (
    Graph,
    LinearOperator,
    Perturbation,
    Vector,
    degrees,
    make_operator,
)
from powerbalance.structure import is_irreducible

logger = logging.getLogger(__name__)


ParamValue = float | int | str | bool


class MeasureName(StrEnum):
    POWER = "power"
    CENTRALITY = "centrality"
    DEGREE = "degree"
    BONACICH = "bonacich"
    SHAPLEY = "shapley"
    NASH = "nash"


class NegativeSurplus(StrEnum):
    # share a negative surplus equally, which keeps R_ij + R_ji = 1
    SPLIT = "split"
    # R_ij = 1 - L_ji when the surplus is negative
    LITERAL = "literal"


DEFAULT_CENTRALITY_TOL = 1e-8
DEFAULT_MAX_ITER = 10_000
SPECTRAL_RADIUS_TOL = 1e-10
DEFAULT_BONACICH_TOL = 1e-12
DEFAULT_NASH_TOL = 1e-9
DEFAULT_NASH_MAX_ITER = 100_000
NASH_START = 0.5


@dataclass(frozen=True, kw_only=True, eq=False)
class MeasureVector:
    name: str
    labels: tuple[str, ...]
    values: Vector
    params: Mapping[str, ParamValue] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.values.shape != (len(self.labels),):
            raise DomainError(
                f"measure {self.name} has {self.values.shape} values "
                f"for {len(self.labels)} labels"
            )
        if not np.all(np.isfinite(self.values)):
            raise DomainError(f"measure {self.name} has non-finite values")


def _as_operator(source: Graph | LinearOperator) -> LinearOperator:
    return source if isinstance(source, LinearOperator) else make_operator(source)


def power_measure(result: BalanceResult) -> MeasureVector:
    return MeasureVector(
        name=MeasureName.POWER,
        labels=result.labels,
        values=result.power,
        params={
            "method": result.method.value,
            "perturbation": result.perturbation.value,
            "alpha": result.alpha,
            "converged": result.converged,
            "residual": result.residual,
            "matvecs": result.matvecs,
        },
    )


def degree_centrality(g: Graph) -> MeasureVector:
    return MeasureVector(name=MeasureName.DEGREE, labels=g.labels, values=degrees(g))


def eigenvector_centrality(
    op: LinearOperator,
    tol: float = DEFAULT_CENTRALITY_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> MeasureVector:
    """Power method x_{k+1} = A x_k / ||A x_k||_2 from x_0 = e, scaled to max 1.

    On bipartite graphs the iterates settle into a period-2 cycle; once
    x_{k+1} and x_{k-1} agree to tol the two phases are averaged, which removes the
    component along the eigenvalue -r and leaves the Perron vector.
    """
    if tol <= 0:
        raise ConfigError(f"tol must be positive, got {tol}")
    if not is_irreducible(op.graph):
        logger.warning("Graph is disconnected; centrality is not unique")

    start = op.matvecs
    x = np.ones(op.n, dtype=np.float64)
    before: Vector | None = None
    converged = recombined = False
    iterations = 0

    for iterations in range(1, max_iter + 1):  # noqa: B007
        y = op.apply(x)
        norm = float(np.linalg.norm(y))
        if norm == 0.0:
            x = y
            converged = True
            break
        x_next = y / norm
        if np.max(np.abs(x_next - x)) <= tol:
            x, converged = x_next, True
            break
        if before is not None and np.max(np.abs(x_next - before)) <= tol:
            x, converged, recombined = (x + x_next) / 2, True, True
            break
        before, x = x, x_next

    if not converged:
        logger.warning("Power method did not converge in %d iterations", max_iter)

    peak = float(np.max(x)) if x.size else 0.0
    values = x / peak if peak > 0 else x
    return MeasureVector(
        name=MeasureName.CENTRALITY,
        labels=op.graph.labels,
        values=values,
        params={
            "tol": tol,
            "iterations": iterations,
            "matvecs": op.matvecs - start,
            "converged": converged,
            "recombined": recombined,
        },
    )


def spectral_radius(
    op: LinearOperator,
    tol: float = SPECTRAL_RADIUS_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> float:
    """max |lambda_i| as the limit of ||A x_k|| / ||x_k||.

    That ratio is the square root of the Rayleigh quotient of A^2, which converges
    also when -r is an eigenvalue (bipartite graphs).
    """
    x = np.full(op.n, 1.0 / math.sqrt(op.n))
    estimate = 0.0
    for _ in range(max_iter):
        y = op.apply(x)
        norm = float(np.linalg.norm(y))
        if norm == 0.0:
            return 0.0
        if abs(norm - estimate) <= tol * norm:
            return norm
        estimate, x = norm, y / norm

    logger.warning("Spectral radius estimate did not converge; using %.12g", estimate)
    return estimate


def bonacich(
    source: Graph | LinearOperator,
    alpha: float,
    beta: float,
    tol: float = DEFAULT_BONACICH_TOL,
) -> MeasureVector:
    """x = alpha (I - beta A)^{-1} A e, solved by conjugate gradients.

    I - beta A is positive definite whenever |beta| < 1/r, for either sign of beta.
    """
    op = _as_operator(source)
    ones = np.ones(op.n, dtype=np.float64)
    a_e = degrees(op.graph) if op.perturbation is Perturbation.NONE else op.apply(ones)
    params: dict[str, ParamValue] = {"alpha": alpha, "beta": beta, "tol": tol}

    if beta == 0:
        return MeasureVector(
            name=MeasureName.BONACICH,
            labels=op.graph.labels,
            values=alpha * a_e,
            params=params,
        )

    radius = spectral_radius(op)
    if abs(beta) * radius >= 1:
        raise ConfigError(
            f"|beta| = {abs(beta):.6g} must stay below 1/r = {1 / radius:.6g}"
        )
    params["spectral_radius"] = radius

    system = spla.LinearOperator(
        shape=(op.n, op.n),
        matvec=lambda v: np.ravel(v) - beta * op.apply(np.ravel(v)),
        dtype=np.float64,
    )
    x, info = spla.cg(system, alpha * a_e, rtol=tol, atol=0.0, maxiter=10 * op.n + 100)
    if info < 0:
        raise DivergenceError(f"divergence: Bonacich linear solve broke down ({info})")
    if info > 0:
        logger.warning("Bonacich solve stopped at the iteration cap before tol %.1e", tol)
    return MeasureVector(
        name=MeasureName.BONACICH, labels=op.graph.labels, values=x, params=params
    )


def bonacich_newton_identity_check(
    g: Graph, gamma: float, tol: float = DEFAULT_BONACICH_TOL
) -> tuple[Vector, Vector]:
    """First Newton iterate from e/gamma next to bonacich(2 gamma, -gamma^2).

    Both equal 2 gamma (I + gamma^2 A)^{-1} A e.
    """
    op = make_operator(g)
    if gamma <= 0:
        raise ConfigError(f"gamma must be positive, got {gamma}")
    if gamma**2 * spectral_radius(op) >= 1:
        raise ConfigError(f"gamma^2 = {gamma**2:.6g} must stay below 1/r")

    newton = newton_first_iterate(op, np.full(op.n, 1.0 / gamma))
    index = bonacich(op, 2 * gamma, -(gamma**2), tol)
    return newton, index.values


def shapley_power(g: Graph) -> MeasureVector:
    """x_i = sum_j A_ij / d_j, i.e. the second Sinkhorn-Knopp iterate A (A e)^÷."""
    op = make_operator(g)
    first = sinkhorn_step(op, np.ones(g.n, dtype=np.float64))
    isolated = int(np.count_nonzero(first == 0))
    if isolated:
        logger.warning("%d isolated nodes get Shapley power 0", isolated)
    # an isolated column is never read by the sparse product, so its 1/0 stays unused
    values = sinkhorn_step(op, first)
    return MeasureVector(name=MeasureName.SHAPLEY, labels=g.labels, values=values)


@dataclass(frozen=True, kw_only=True, eq=False)
class NashState:
    # per directed edge k out of tails[k]; reverse[k] is the same edge seen from the
    # other end, whose tail tails[reverse[k]] is the partner of tails[k]
    tails: npt.NDArray[np.int64]
    reverse: npt.NDArray[np.int64]
    # R[k]: revenue of tails[k] on edge k
    R: Vector
    # L[k]: best alternative of tails[k] when negotiating over edge k
    L: Vector
    t: int
    delta: float

    def node_values(self, n: int) -> Vector:
        best = np.zeros(n, dtype=np.float64)
        np.maximum.at(best, self.tails, self.R)
        return best


def _directed_edges(
    g: Graph,
) -> tuple[npt.NDArray[np.int64], npt.NDArray[np.int64]]:
    if g.has_loops:
        raise GraphError("Nash bargaining is undefined on graphs with loops")
    pairs = [(edge.i, edge.j) for edge in g.edges]
    m = len(pairs)
    tails = np.asarray([i for i, _ in pairs] + [j for _, j in pairs], dtype=np.int64)
    reverse = np.concatenate([np.arange(m, 2 * m), np.arange(0, m)]).astype(np.int64)
    return tails, reverse


def _best_alternatives(n: int, tails: npt.NDArray[np.int64], revenue: Vector) -> Vector:
    """L[k] = max over the other edges of tails[k] of their revenue, 0 if none."""
    best = np.zeros(n, dtype=np.float64)
    np.maximum.at(best, tails, revenue)
    at_best = revenue == best[tails]
    holders = np.zeros(n, dtype=np.int64)
    np.add.at(holders, tails, at_best.astype(np.int64))
    runner_up = np.zeros(n, dtype=np.float64)
    np.maximum.at(runner_up, tails[~at_best], revenue[~at_best])
    sole_best = at_best & (holders[tails] == 1)
    alternatives: Vector = np.where(sole_best, runner_up[tails], best[tails])
    return alternatives


def nash_dynamics(
    g: Graph,
    tol: float = DEFAULT_NASH_TOL,
    max_iter: int = DEFAULT_NASH_MAX_ITER,
    damping: float = 1.0,
    negative_surplus: NegativeSurplus = NegativeSurplus.SPLIT,
) -> Iterator[NashState]:
    """Synchronous bargaining dynamics, one state per round, starting at R = 1/2.

    Each pair splits the surplus s = 1 - L_ij - L_ji of its unit edge on top of
    the outside options. Stops after the first round that moved no revenue by
    more than tol, or after max_iter rounds.
    """
    if not (0 < damping <= 1):
        raise ConfigError(f"damping must lie in (0, 1], got {damping}")
    if g.is_weighted:
        logger.warning("Nash bargaining ignores edge weights: every edge is worth 1")

    tails, reverse = _directed_edges(g)
    revenue = np.full(tails.size, NASH_START, dtype=np.float64)

    for t in range(1, max_iter + 1):
        alternatives = _best_alternatives(g.n, tails, revenue)
        opposite = alternatives[reverse]
        surplus = 1.0 - alternatives - opposite
        proposal = alternatives + surplus / 2
        if negative_surplus is NegativeSurplus.LITERAL:
            proposal = np.where(surplus >= 0, proposal, 1.0 - opposite)
        updated = (1.0 - damping) * revenue + damping * proposal

        delta = float(np.max(np.abs(updated - revenue))) if updated.size else 0.0
        revenue = updated
        yield NashState(
            tails=tails,
            reverse=reverse,
            R=revenue,
            L=alternatives,
            t=t,
            delta=delta,
        )
        if delta <= tol:
            return


def nash_power(
    g: Graph,
    tol: float = DEFAULT_NASH_TOL,
    max_iter: int = DEFAULT_NASH_MAX_ITER,
    damping: float = 1.0,
    negative_surplus: NegativeSurplus = NegativeSurplus.SPLIT,
) -> MeasureVector:
    """x_i = max_j R_ij at the fixpoint of the bargaining dynamics; 0 when isolated."""
    state: NashState | None = None
    for state in nash_dynamics(g, tol, max_iter, damping, negative_surplus):  # noqa: B007
        pass

    if state is None:
        values = np.zeros(g.n, dtype=np.float64)
        converged, rounds = True, 0
    else:
        values = state.node_values(g.n)
        converged, rounds = state.delta <= tol, state.t
    if not converged:
        logger.warning("Nash dynamics still moving after %d rounds", max_iter)

    return MeasureVector(
        name=MeasureName.NASH,
        labels=g.labels,
        values=values,
        params={
            "tol": tol,
            "max_iter": max_iter,
            "damping": damping,
            "negative_surplus": negative_surplus.value,
            "iterations": rounds,
            "converged": converged,
        },
    )
