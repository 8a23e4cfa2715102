"""Solvers for the power equation x = A x^÷.

A positive x solves it iff D = diag(x^÷) balances A, i.e. D A D is doubly stochastic.
Two solvers are provided: the Sinkhorn-Knopp fixed-point iteration and an inexact
Newton method whose inner linear systems are solved by conjugate gradients. Both
count their work in products with the (perturbed) adjacency operator.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import StrEnum

import numpy as np
import numpy.typing as npt
from scipy.sparse import linalg as spla

from powerbalance.errors import ConfigError, DivergenceError, DomainError, StructureError
from powerbalance.graph import Graph, LinearOperator, Perturbation, Vector, make_operator
from powerbalance.metrics import track_solve
from powerbalance.structure import has_total_support

logger = logging.getLogger(__name__)


class Method(StrEnum):
    SINKHORN_KNOPP = "sk"
    NEWTON = "newton"


class Normalization(StrEnum):
    # natural scale of the even/odd geometric-mean recombination
    GEOMETRIC_MEAN = "geometric_mean"
    FIRST_COMPONENT = "first_component"


class Preconditioner(StrEnum):
    NONE = "none"
    JACOBI = "jacobi"


DEFAULT_TOL = 1e-8
DEFAULT_MAX_OUTER = {Method.SINKHORN_KNOPP: 50_000, Method.NEWTON: 200}
DEFAULT_INNER_RTOL = 0.1
DEFAULT_INNER_MAXITER = 200
# the Newton factor y stays inside [STEP_FLOOR, STEP_CEILING]
STEP_FLOOR = 0.1
STEP_CEILING = 3.0
MAX_BACKTRACKS = 4
FORCING_DECAY = 0.9
FORCING_SAFEGUARD = 0.1
EXACT_INNER_RTOL = 1e-12

NO_SOLUTION_MESSAGE = "no exact solution exists; perturbation required"


@dataclass(frozen=True, kw_only=True)
class SolverConfig:
    method: Method = Method.SINKHORN_KNOPP
    tol: float = DEFAULT_TOL
    # None selects the per-method default
    max_outer: int | None = None
    # upper bound of the adaptive Newton forcing term
    inner_rtol: float = DEFAULT_INNER_RTOL
    inner_maxiter: int = DEFAULT_INNER_MAXITER
    normalization: Normalization = Normalization.GEOMETRIC_MEAN
    preconditioner: Preconditioner = Preconditioner.JACOBI
    # refuse unperturbed solves on graphs without total support
    strict: bool = False

    def __post_init__(self) -> None:
        if not (math.isfinite(self.tol) and self.tol > 0):
            raise ConfigError(f"tol must be positive, got {self.tol}")
        if self.max_outer is not None and self.max_outer < 1:
            raise ConfigError(f"max_outer must be at least 1, got {self.max_outer}")
        if not (0 < self.inner_rtol < 1):
            raise ConfigError(f"inner_rtol must lie in (0, 1), got {self.inner_rtol}")
        if self.inner_maxiter < 1:
            raise ConfigError(
                f"inner_maxiter must be at least 1, got {self.inner_maxiter}"
            )

    @property
    def outer_limit(self) -> int:
        if self.max_outer is None:
            return DEFAULT_MAX_OUTER[self.method]
        return self.max_outer


@dataclass(frozen=True, kw_only=True, eq=False)
class BalanceResult:
    method: Method
    labels: tuple[str, ...]
    # x, strictly positive
    power: Vector
    # diagonal of D = diag(x^÷) at natural scale; D A D is doubly stochastic
    scaling: Vector
    # ||D A D e - e||_inf
    residual: float
    outer_iterations: int
    matvecs: int
    converged: bool
    perturbation: Perturbation
    alpha: float
    normalization: Normalization


def _ensure_positive(x: Vector, where: str) -> None:
    if not (np.all(np.isfinite(x)) and np.all(x > 0)):
        raise DivergenceError(
            f"divergence: {where} produced a non-finite or non-positive entry"
        )


def sinkhorn_step(op: LinearOperator, x: Vector) -> Vector:
    """x -> A x^÷, one counted product."""
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        return op.apply(1.0 / x)


def symmetric_sweep(op: LinearOperator, x: Vector, ax: Vector | None = None) -> Vector:
    """One Sinkhorn step recombined with its input: sqrt(x ⊙ A x^÷)."""
    if ax is None:
        ax = sinkhorn_step(op, x)
    return np.sqrt(x) * np.sqrt(ax)


def _residual(ax: Vector, x: Vector) -> float:
    # D A D e = (A x^÷) / x for D = diag(x^÷)
    return float(np.max(np.abs(ax / x - 1.0)))


def balance_residual(op: LinearOperator, x: npt.ArrayLike) -> float:
    vector = np.asarray(x, dtype=np.float64)
    if not (np.all(np.isfinite(vector)) and np.all(vector > 0)):
        raise DomainError("the balance residual needs a strictly positive vector")
    ax = sinkhorn_step(op, vector)
    _ensure_positive(ax, "residual evaluation")
    return _residual(ax, vector)


def _initial_vector(op: LinearOperator, initial: npt.ArrayLike | None) -> Vector:
    if initial is None:
        return np.ones(op.n, dtype=np.float64)
    x0 = np.asarray(initial, dtype=np.float64)
    if x0.shape != (op.n,) or not np.all(x0 > 0):
        raise DomainError("the initial vector must be strictly positive and of size n")
    return x0


def _result(
    op: LinearOperator,
    cfg: SolverConfig,
    x: Vector,
    *,
    residual: float,
    outer_iterations: int,
    matvecs: int,
) -> BalanceResult:
    converged = residual <= cfg.tol
    if not converged:
        logger.warning(
            "%s stopped after %d outer iterations with residual %.3e > tol %.1e",
            cfg.method.value,
            outer_iterations,
            residual,
            cfg.tol,
        )
    power = x / x[0] if cfg.normalization is Normalization.FIRST_COMPONENT else x
    return BalanceResult(
        method=cfg.method,
        labels=op.graph.labels,
        power=power,
        scaling=1.0 / x,
        residual=residual,
        outer_iterations=outer_iterations,
        matvecs=matvecs,
        converged=converged,
        perturbation=op.perturbation,
        alpha=op.alpha,
        normalization=cfg.normalization,
    )


def sinkhorn_knopp(
    op: LinearOperator,
    cfg: SolverConfig,
    initial: npt.ArrayLike | None = None,
) -> BalanceResult:
    """Iterate x_{k+1} = A x_k^÷ from x_0 = e.

    Even and odd iterates converge separately to limits that differ by a constant
    factor; the returned power is their component-wise geometric mean. The loop
    stops once x_{k+2} / x_k is within tol of e and the recombined vector passes the
    balance residual test (that check costs one extra product).
    """
    start = op.matvecs
    limit = cfg.outer_limit

    with track_solve(Method.SINKHORN_KNOPP.value):
        x_prev = _initial_vector(op, initial)
        x = sinkhorn_step(op, x_prev)
        _ensure_positive(x, "Sinkhorn-Knopp")
        outer = 1
        power: Vector | None = None
        residual = math.inf

        while outer < limit:
            x_next = sinkhorn_step(op, x)
            _ensure_positive(x_next, "Sinkhorn-Knopp")
            outer += 1
            if np.max(np.abs(x_next / x_prev - 1.0)) <= cfg.tol:
                candidate = np.sqrt(x) * np.sqrt(x_next)
                residual = balance_residual(op, candidate)
                if residual <= cfg.tol:
                    power = candidate
                    break
            x_prev, x = x, x_next

        if power is None:
            power = np.sqrt(x_prev) * np.sqrt(x)
            residual = balance_residual(op, power)

    return _result(
        op,
        cfg,
        power,
        residual=residual,
        outer_iterations=outer,
        matvecs=op.matvecs - start,
    )


def _scaled_jacobian(op: LinearOperator, x: Vector) -> spla.LinearOperator:
    # J_f(x) = I + A D_{(x^2)^÷}; substituting y = D_x w and scaling rows by
    # D_{x^÷} gives the symmetric I + D_{x^÷} A D_{x^÷}.
    return spla.LinearOperator(
        shape=(op.n, op.n),
        matvec=lambda w: np.ravel(w) + op.apply(np.ravel(w) / x) / x,
        dtype=np.float64,
    )


def _squared_residual(v: Vector) -> float:
    return float(np.sum((1.0 - v) ** 2))


def _newton_factor(
    op: LinearOperator, d: Vector, v: Vector, inner_tol: float, cfg: SolverConfig
) -> Vector | None:
    """Multiplicative update y for the scaling d, None on breakdown.

    Preconditioned CG on (D A D + D_v) y = v + e from y = e, one product per
    iteration. It stops once the preconditioned residual drops below `inner_tol`, or
    where the next iterate would leave [STEP_FLOOR, STEP_CEILING], in which case y
    is cut back to that boundary.
    """
    if cfg.preconditioner is Preconditioner.JACOBI:
        diag = v + d * d * op.diagonal()
    else:
        diag = np.ones(op.n, dtype=np.float64)

    y = np.ones(op.n, dtype=np.float64)
    r = 1.0 - v
    z = r / diag
    rho = float(r @ z)
    p = z
    for _ in range(cfg.inner_maxiter):
        if rho <= inner_tol:
            break
        with np.errstate(over="ignore", invalid="ignore"):
            w = d * op.apply(d * p) + v * p
            curvature = float(p @ w)
        if not (math.isfinite(curvature) and curvature > 0):
            return None
        alpha = rho / curvature
        step = alpha * p
        trial = y + step
        if np.min(trial) <= STEP_FLOOR:
            shrinking = step < 0
            gamma = np.min((STEP_FLOOR - y[shrinking]) / step[shrinking])
            return y + float(gamma) * step
        if np.max(trial) >= STEP_CEILING:
            growing = trial >= STEP_CEILING
            gamma = np.min((STEP_CEILING - y[growing]) / step[growing])
            return y + float(gamma) * step
        y = trial
        r = r - alpha * w
        z = r / diag
        rho, rho_prev = float(r @ z), rho
        p = z + (rho / rho_prev) * p
    return y


def _line_search(
    op: LinearOperator, d: Vector, ad: Vector, y: Vector, residual_sq: float
) -> tuple[Vector, Vector]:
    """Commit d ⊙ y, or a step shortened toward y = e, only if the residual drops.

    When no trial lowers the residual the point moves by one symmetric Sinkhorn
    sweep instead. Every trial costs one product.
    """
    t = 1.0
    for _ in range(MAX_BACKTRACKS + 1):
        trial = d * (1.0 + t * (y - 1.0))
        a_trial = op.apply(trial)
        if np.all(np.isfinite(a_trial)) and (
            _squared_residual(trial * a_trial) < residual_sq
        ):
            return trial, a_trial
        t /= 2

    logger.debug("Newton step rejected; taking a Sinkhorn sweep")
    swept = 1.0 / symmetric_sweep(op, 1.0 / d, ad)
    return swept, op.apply(swept)


def _forcing_term(
    eta: float, residual_sq: float, previous_sq: float, cfg: SolverConfig
) -> float:
    # shrinks with the squared residual ratio; never below what tol still needs
    previous = eta
    eta = FORCING_DECAY * residual_sq / previous_sq
    if FORCING_DECAY * previous**2 > FORCING_SAFEGUARD:
        eta = max(eta, FORCING_DECAY * previous**2)
    eta = min(eta, cfg.inner_rtol)
    if residual_sq > 0:
        eta = max(eta, cfg.tol / (2 * math.sqrt(residual_sq)))
    return eta


def newton_balance(
    op: LinearOperator,
    cfg: SolverConfig,
    initial: npt.ArrayLike | None = None,
) -> BalanceResult:
    """Inexact Newton on the scaling d = x^÷, i.e. on d ⊙ A d = e.

    This is the Newton iteration x_{k+1} = 2 J_f(x_k)^{-1} A x_k^÷ carried out on the
    reciprocal vector. Each outer step multiplies d by a factor y kept inside
    [STEP_FLOOR, STEP_CEILING], so the iterate never leaves the positive orthant.
    The inner tolerance follows the outer residual (`inner_rtol` caps it) and a
    step is committed only after the residual line search accepts it. An inner
    breakdown is replaced by one symmetric Sinkhorn sweep.
    """
    start = op.matvecs
    limit = cfg.outer_limit

    with track_solve(Method.NEWTON.value):
        d = 1.0 / _initial_vector(op, initial)
        ad = op.apply(d)
        _ensure_positive(ad, "Newton")
        v = d * ad
        # least-squares scalar rescale of the start, free of products
        scale = math.sqrt(float(np.sum(v) / (v @ v)))
        d, ad, v = scale * d, scale * ad, scale * scale * v
        residual_sq = _squared_residual(v)
        residual = float(np.max(np.abs(v - 1.0)))
        eta = cfg.inner_rtol
        outer = 0

        while residual > cfg.tol and outer < limit:
            inner_tol = max(eta**2 * residual_sq, cfg.tol**2)
            y = _newton_factor(op, d, v, inner_tol, cfg)
            if y is None:
                logger.debug("Inner CG broke down; taking a Sinkhorn sweep")
                d = 1.0 / symmetric_sweep(op, 1.0 / d, ad)
                ad = op.apply(d)
            else:
                d, ad = _line_search(op, d, ad, y, residual_sq)
            _ensure_positive(d, "Newton")
            _ensure_positive(ad, "Newton")
            outer += 1

            v = d * ad
            previous_sq, residual_sq = residual_sq, _squared_residual(v)
            residual = float(np.max(np.abs(v - 1.0)))
            eta = _forcing_term(eta, residual_sq, previous_sq, cfg)

    return _result(
        op,
        cfg,
        1.0 / d,
        residual=residual,
        outer_iterations=outer,
        matvecs=op.matvecs - start,
    )


def newton_first_iterate(
    op: LinearOperator, x0: npt.ArrayLike, inner_rtol: float = EXACT_INNER_RTOL
) -> Vector:
    """x_1 = 2 J_f(x_0)^{-1} A x_0^÷ with the linear system solved to `inner_rtol`."""
    x = _initial_vector(op, x0)
    ax = sinkhorn_step(op, x)
    w, info = spla.cg(
        _scaled_jacobian(op, x),
        2.0 * ax / x,
        rtol=inner_rtol,
        atol=0.0,
        maxiter=10 * op.n + 100,
    )
    if info < 0:
        raise DivergenceError(f"divergence: Newton linear solve broke down ({info})")
    if info > 0:
        logger.warning("Newton linear solve stopped at the iteration cap")
    result: Vector = x * w
    return result


def solve(
    op: LinearOperator,
    cfg: SolverConfig,
    initial: npt.ArrayLike | None = None,
) -> BalanceResult:
    match cfg.method:
        case Method.SINKHORN_KNOPP:
            return sinkhorn_knopp(op, cfg, initial)
        case Method.NEWTON:
            return newton_balance(op, cfg, initial)


def compute_power(
    g: Graph,
    perturbation: Perturbation = Perturbation.NONE,
    alpha: float | None = None,
    cfg: SolverConfig | None = None,
) -> BalanceResult:
    cfg = cfg or SolverConfig()
    op = make_operator(g, perturbation, alpha)

    if perturbation is Perturbation.NONE:
        total, violating = has_total_support(g)
        if not total:
            if cfg.strict:
                raise StructureError(NO_SOLUTION_MESSAGE)
            logger.warning(
                "%s (%d edges lie on no positive diagonal)",
                NO_SOLUTION_MESSAGE,
                len(violating),
            )

    logger.info(
        "Solving for power with %s (perturbation=%s, alpha=%s)",
        cfg.method.value,
        perturbation.value,
        op.alpha,
    )
    return solve(op, cfg)
