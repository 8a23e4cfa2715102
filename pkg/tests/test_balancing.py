import logging
import math
from dataclasses import replace

import numpy as np
import pytest

from powerbalance.balancing import (
    NO_SOLUTION_MESSAGE,
    BalanceResult,
    Method,
    Normalization,
    Preconditioner,
    SolverConfig,
    balance_residual,
    compute_power,
    newton_balance,
    sinkhorn_knopp,
    sinkhorn_step,
    solve,
    symmetric_sweep,
)
from powerbalance.errors import ConfigError, DivergenceError, DomainError, StructureError
from powerbalance.generators import largest_biconnected_component, random_connected_graph
from powerbalance.graph import Graph, LinearOperator, Perturbation, make_operator
from powerbalance.structure import is_fully_indecomposable
from tests.conftest import barbell

# Test constants
SQRT2 = math.sqrt(2)
TOL = 1e-8
DIAGONAL_ALPHA = 0.15
FULL_ALPHA = 0.01
TIE_TOL = 1e-9
AGREEMENT_RTOL = 1e-6
RANDOM_GRAPHS = 50
SEED = 7
SK_OUTER_LIMIT = 50_000
NEWTON_OUTER_LIMIT = 200
EXACT_TOL = 1e-12
P2_SK_MATVECS = 3
OUTER_CAP = 2
CORE_N = 100
CORE_M = 200
CORE_SEED = 301
CORE_DRAWS = 100
SK = SolverConfig(method=Method.SINKHORN_KNOPP, tol=TOL)
NEWTON = SolverConfig(method=Method.NEWTON, tol=TOL)


def diagonal(g: Graph, alpha: float = DIAGONAL_ALPHA) -> LinearOperator:
    return make_operator(g, Perturbation.DIAGONAL, alpha)


def power_of(g: Graph, label: str, result: BalanceResult) -> float:
    return float(result.power[g.index_of(label)])


def random_graphs(count: int, max_nodes: int = 40) -> list[Graph]:
    rng = np.random.default_rng(SEED)
    graphs = []
    for k in range(count):
        n = int(rng.integers(5, max_nodes + 1))
        m = int(rng.integers(2 * n, 3 * n))
        graphs.append(random_connected_graph(n, min(m, n * (n - 1) // 2), SEED + k))
    return graphs


def assert_solution_failed(op: LinearOperator, cfg: SolverConfig) -> None:
    try:
        result = solve(op, cfg)
    except DivergenceError:
        return
    assert not result.converged


class TestSolverConfig:
    def test_defaults(self) -> None:
        cfg = SolverConfig()

        assert cfg.method is Method.SINKHORN_KNOPP
        assert cfg.tol == TOL
        assert cfg.outer_limit == SK_OUTER_LIMIT
        assert SolverConfig(method=Method.NEWTON).outer_limit == NEWTON_OUTER_LIMIT

    @pytest.mark.parametrize(
        ("kwargs", "message"),
        [
            ({"tol": 0.0}, "tol must be positive"),
            ({"tol": math.nan}, "tol must be positive"),
            ({"max_outer": 0}, "max_outer must be at least 1"),
            ({"inner_rtol": 1.0}, "inner_rtol"),
            ({"inner_maxiter": 0}, "inner_maxiter"),
        ],
    )
    def test_invalid(self, kwargs: dict[str, float], message: str) -> None:
        with pytest.raises(ConfigError, match=message):
            SolverConfig(**kwargs)  # type: ignore[arg-type]


class TestBalanceResidual:
    def test_exact_solution(self, k3: Graph) -> None:
        assert balance_residual(make_operator(k3), [SQRT2] * 3) <= EXACT_TOL

    def test_ones_on_k3(self, k3: Graph) -> None:
        assert balance_residual(make_operator(k3), np.ones(3)) == pytest.approx(1.0)

    def test_any_reciprocal_pair_balances_p2(self, p2: Graph) -> None:
        assert balance_residual(make_operator(p2), [2.0, 0.5]) == 0.0

    @pytest.mark.parametrize("x", [[1.0, 0.0, 1.0], [1.0, -1.0, 1.0], [1.0, math.nan, 1.0]])
    def test_non_positive(self, k3: Graph, x: list[float]) -> None:
        with pytest.raises(DomainError, match="strictly positive"):
            balance_residual(make_operator(k3), x)


class TestSinkhornKnopp:
    def test_k3(self, k3: Graph) -> None:
        result = sinkhorn_knopp(make_operator(k3), SK)

        assert result.converged
        assert result.power == pytest.approx([SQRT2] * 3, abs=TOL)
        assert result.residual <= TOL
        assert result.scaling == pytest.approx(1 / result.power)

    def test_p2_geometric_mean(self, p2: Graph) -> None:
        result = sinkhorn_knopp(make_operator(p2), SK)

        assert result.converged
        assert result.power.tolist() == [1.0, 1.0]

    def test_matvecs_count_every_product(self, p2: Graph) -> None:
        op = make_operator(p2)
        op.apply(np.ones(2))
        result = sinkhorn_knopp(op, SK)

        # two iterates plus the residual check of the recombined vector
        assert result.matvecs == P2_SK_MATVECS
        assert op.matvecs == result.matvecs + 1

    def test_sinkhorn_step_is_one_product(self, p3: Graph) -> None:
        op = make_operator(p3)

        assert sinkhorn_step(op, np.array([1.0, 2.0, 1.0])).tolist() == [0.5, 2.0, 0.5]
        assert op.matvecs == 1

    def test_star_without_perturbation_fails(self, star: Graph) -> None:
        assert_solution_failed(make_operator(star), SK)

    @pytest.mark.parametrize("alpha", [0.05, 0.15, 0.5])
    def test_star_regained_by_perturbation(self, star: Graph, alpha: float) -> None:
        for cfg in (SK, NEWTON):
            result = solve(diagonal(star, alpha), cfg)

            assert result.converged
            assert np.all(result.power > 0)

    def test_first_component_normalization(self, p5: Graph) -> None:
        cfg = SolverConfig(normalization=Normalization.FIRST_COMPONENT)
        natural = sinkhorn_knopp(diagonal(p5), SK)
        scaled = sinkhorn_knopp(diagonal(p5), cfg)

        assert scaled.power[0] == 1.0
        assert scaled.power == pytest.approx(natural.power / natural.power[0])
        assert scaled.residual == natural.residual

    def test_iteration_cap(self, p5: Graph, caplog: pytest.LogCaptureFixture) -> None:
        with caplog.at_level(logging.WARNING):
            result = sinkhorn_knopp(diagonal(p5), SolverConfig(max_outer=OUTER_CAP))

        assert not result.converged
        assert result.outer_iterations == OUTER_CAP
        assert "stopped after 2 outer iterations" in caplog.text

    def test_invalid_initial_vector(self, k3: Graph) -> None:
        with pytest.raises(DomainError, match="initial vector"):
            sinkhorn_knopp(make_operator(k3), SK, initial=[1.0, 0.0, 1.0])


class TestNewton:
    def test_k3(self, k3: Graph) -> None:
        result = newton_balance(make_operator(k3), NEWTON)

        assert result.converged
        assert result.power == pytest.approx([SQRT2] * 3, abs=TOL)

    def test_p2_is_solved_by_the_start(self, p2: Graph) -> None:
        result = newton_balance(make_operator(p2), NEWTON)

        assert result.converged
        assert result.outer_iterations == 0
        assert result.power.tolist() == [1.0, 1.0]

    def test_star_without_perturbation_fails(self, star: Graph) -> None:
        assert_solution_failed(make_operator(star), NEWTON)

    def test_jacobi_preconditioner(self, p5: Graph) -> None:
        cfg = SolverConfig(method=Method.NEWTON, preconditioner=Preconditioner.JACOBI)
        plain = newton_balance(
            diagonal(p5), replace(NEWTON, preconditioner=Preconditioner.NONE)
        )
        preconditioned = newton_balance(diagonal(p5), cfg)

        assert preconditioned.converged
        assert preconditioned.power == pytest.approx(plain.power, rel=AGREEMENT_RTOL)

    def test_agrees_with_sk_on_p3(self, p3: Graph) -> None:
        sk = sinkhorn_knopp(diagonal(p3), SK)
        newton = newton_balance(diagonal(p3), NEWTON)

        assert newton.power == pytest.approx(sk.power, rel=AGREEMENT_RTOL)

    def test_barbell_without_perturbation(self) -> None:
        g = barbell()
        sk = sinkhorn_knopp(make_operator(g), SK)
        newton = newton_balance(make_operator(g), NEWTON)

        assert newton.converged
        assert newton.residual <= TOL
        assert newton.power == pytest.approx(sk.power, rel=AGREEMENT_RTOL)

    def test_sparse_biconnected_core(self) -> None:
        g = next(
            core
            for seed in range(CORE_SEED, CORE_SEED + CORE_DRAWS)
            if is_fully_indecomposable(
                core := largest_biconnected_component(
                    random_connected_graph(CORE_N, CORE_M, seed)
                )
            )
        )
        sk = sinkhorn_knopp(make_operator(g), SK)
        newton = newton_balance(make_operator(g), NEWTON)

        assert sk.converged
        assert newton.converged
        assert newton.outer_iterations < NEWTON_OUTER_LIMIT
        assert newton.power == pytest.approx(sk.power, rel=AGREEMENT_RTOL)

    def test_far_start_stays_positive(self, p5: Graph) -> None:
        op = diagonal(p5)
        start = np.array([10.0, 0.1, 10.0, 0.1, 10.0])
        result = newton_balance(op, NEWTON, initial=start)
        reference = sinkhorn_knopp(op, SK)

        assert result.converged
        assert np.all(result.power > 0)
        assert result.power == pytest.approx(reference.power, rel=AGREEMENT_RTOL)

    def test_matvecs_include_inner_products(self, p5: Graph) -> None:
        op = diagonal(p5)
        result = newton_balance(op, NEWTON)

        assert result.matvecs == op.matvecs
        assert result.matvecs > result.outer_iterations + 1


class TestSymmetricSweep:
    def test_fixed_point_is_kept(self, k3: Graph) -> None:
        x = np.full(3, SQRT2)
        assert symmetric_sweep(make_operator(k3), x) == pytest.approx(x)

    def test_one_product(self, p3: Graph) -> None:
        op = make_operator(p3)
        symmetric_sweep(op, np.ones(3))
        assert op.matvecs == 1


class TestComputePower:
    def test_strict_refuses_without_total_support(self, star: Graph) -> None:
        with pytest.raises(StructureError, match="perturbation required"):
            compute_power(star, cfg=SolverConfig(strict=True))

    def test_lenient_warns(self, p4: Graph, caplog: pytest.LogCaptureFixture) -> None:
        with caplog.at_level(logging.WARNING):
            result = compute_power(p4, cfg=SolverConfig(max_outer=10))

        assert NO_SOLUTION_MESSAGE in caplog.text
        assert result.perturbation is Perturbation.NONE

    def test_strict_allows_perturbed_runs(self, star: Graph) -> None:
        result = compute_power(
            star, Perturbation.DIAGONAL, DIAGONAL_ALPHA, SolverConfig(strict=True)
        )
        assert result.converged
        assert result.alpha == DIAGONAL_ALPHA

    def test_path_rankings(self, p3: Graph, p4: Graph, p5: Graph) -> None:
        on_p3 = compute_power(p3, Perturbation.DIAGONAL, DIAGONAL_ALPHA, SK)
        on_p4 = compute_power(p4, Perturbation.DIAGONAL, DIAGONAL_ALPHA, SK)
        on_p5 = compute_power(p5, Perturbation.DIAGONAL, DIAGONAL_ALPHA, SK)
        a3, b3, c3 = on_p3.power
        a4, b4, c4, d4 = on_p4.power
        a5, b5, c5, d5, e5 = on_p5.power

        assert b3 > a3
        assert a3 == pytest.approx(c3, abs=TIE_TOL)

        assert b4 == pytest.approx(c4, abs=TIE_TOL)
        assert a4 == pytest.approx(d4, abs=TIE_TOL)
        assert b4 > a4
        assert b4 < b3

        assert b5 == pytest.approx(d5, abs=TIE_TOL)
        assert a5 == pytest.approx(e5, abs=TIE_TOL)
        assert b5 > c5 > a5
        assert b5 > b4

    def test_deterministic(self, p5: Graph) -> None:
        first = compute_power(p5, Perturbation.DIAGONAL, DIAGONAL_ALPHA, NEWTON)
        second = compute_power(p5, Perturbation.DIAGONAL, DIAGONAL_ALPHA, NEWTON)

        assert first.power.tobytes() == second.power.tobytes()
        assert first.matvecs == second.matvecs


class TestSolutionProperties:
    def test_scaled_matrix_is_doubly_stochastic(self) -> None:
        for g in random_graphs(RANDOM_GRAPHS, max_nodes=120):
            op = diagonal(g)
            result = sinkhorn_knopp(op, SK)
            assert result.converged

            d = result.scaling
            scaled = d[:, None] * op.effective_graph().adjacency.toarray() * d[None, :]
            assert np.allclose(scaled, scaled.T)
            assert np.max(np.abs(scaled.sum(axis=1) - 1)) <= 10 * TOL
            assert np.max(np.abs(scaled.sum(axis=0) - 1)) <= 10 * TOL

            x = result.power
            assert np.max(np.abs(x - op.apply(1 / x)) / x) <= 10 * TOL

    def test_solvers_agree(self) -> None:
        for g in random_graphs(RANDOM_GRAPHS):
            sk = sinkhorn_knopp(diagonal(g), SK)
            newton = newton_balance(diagonal(g), NEWTON)

            assert sk.converged
            assert newton.converged
            assert newton.power == pytest.approx(sk.power, rel=AGREEMENT_RTOL)

    @pytest.mark.parametrize("name", ["k3", "p5"])
    def test_unique_from_any_start(self, name: str, request: pytest.FixtureRequest) -> None:
        g: Graph = request.getfixturevalue(name)
        rng = np.random.default_rng(SEED)
        op = diagonal(g)
        from_ones = sinkhorn_knopp(op, SK)
        from_random = sinkhorn_knopp(op, SK, initial=rng.uniform(0.1, 10.0, g.n))

        assert from_random.power == pytest.approx(from_ones.power, rel=AGREEMENT_RTOL)

    def test_full_perturbation_saves_products(self) -> None:
        g = barbell()
        assert is_fully_indecomposable(g)
        plain = sinkhorn_knopp(make_operator(g), SK)
        full = sinkhorn_knopp(make_operator(g, Perturbation.FULL, FULL_ALPHA), SK)

        assert plain.converged
        assert full.converged
        assert full.matvecs < plain.matvecs
