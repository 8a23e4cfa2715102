import logging
import math

import numpy as np
import pytest

from powerbalance.balancing import compute_power, sinkhorn_step
from powerbalance.errors import ConfigError, DomainError, GraphError
from powerbalance.generators import random_connected_graph
from powerbalance.graph import Graph, Perturbation, degrees, make_operator
from powerbalance.measures import (
    MeasureName,
    MeasureVector,
    NegativeSurplus,
    bonacich,
    bonacich_newton_identity_check,
    degree_centrality,
    eigenvector_centrality,
    nash_dynamics,
    nash_power,
    power_measure,
    shapley_power,
    spectral_radius,
)
from powerbalance.stats import KendallVariant, kendall_tau

# Test constants
SQRT2 = math.sqrt(2)
SQRT3 = math.sqrt(3)
TOL = 1e-8
K3_BONACICH = 40 / 37
K3_BETA = -0.85 / 2
IDENTITY_RTOL = 1e-9
IDENTITY_GRAPHS = 20
IDENTITY_GAMMAS = (0.1, 0.3, 0.5)
LIMIT_FRACTION = 0.99
LIMIT_TAU = 0.99
NASH_HALF = 0.5
NASH_ATOL = 1e-7
DAMPING = 0.5
SEED = 11
NASH_FIXPOINT_ATOL = 1e-6
SHAPLEY_GRAPHS = 100
RANGE_GRAPHS = 10


def weighted_k4() -> Graph:
    """K4 with distinct weights, so no two nodes are interchangeable."""
    return Graph.from_edges(
        list("abcd"),
        [(0, 1, 1.0), (0, 2, 2.0), (0, 3, 3.0), (1, 2, 4.0), (1, 3, 5.0), (2, 3, 6.0)],
    )


class TestMeasureVector:
    def test_length_mismatch(self) -> None:
        with pytest.raises(DomainError, match="values"):
            MeasureVector(name="x", labels=("a", "b"), values=np.ones(3))

    def test_non_finite(self) -> None:
        with pytest.raises(DomainError, match="non-finite"):
            MeasureVector(name="x", labels=("a",), values=np.array([math.inf]))

    def test_power_measure_carries_solver_params(self, k3: Graph) -> None:
        measure = power_measure(compute_power(k3))

        assert measure.name == MeasureName.POWER
        assert measure.labels == k3.labels
        assert measure.params["method"] == "sk"
        assert measure.params["perturbation"] == Perturbation.NONE.value
        assert measure.params["converged"] is True

    def test_degree(self, p3: Graph) -> None:
        assert degree_centrality(p3).values.tolist() == [1.0, 2.0, 1.0]


class TestEigenvectorCentrality:
    def test_p5_peaks_in_the_middle(self, p5: Graph) -> None:
        measure = eigenvector_centrality(make_operator(p5))

        assert p5.labels[int(np.argmax(measure.values))] == "C"
        assert float(np.max(measure.values)) == 1.0
        assert measure.params["converged"] is True

    def test_star_phases_are_recombined(self, star: Graph) -> None:
        measure = eigenvector_centrality(make_operator(star), tol=TOL)

        assert measure.params["recombined"] is True
        assert measure.values == pytest.approx([1.0] + [1 / SQRT3] * 3, abs=1e-6)

    def test_p2(self, p2: Graph) -> None:
        measure = eigenvector_centrality(make_operator(p2))

        assert measure.values == pytest.approx([1.0, 1.0])
        assert measure.params["recombined"] is False

    def test_matvecs_are_reported(self, k3: Graph) -> None:
        op = make_operator(k3)
        measure = eigenvector_centrality(op)

        assert measure.params["matvecs"] == op.matvecs

    def test_disconnected_warns(
        self, triangle_and_edge: Graph, caplog: pytest.LogCaptureFixture
    ) -> None:
        with caplog.at_level(logging.WARNING):
            eigenvector_centrality(make_operator(triangle_and_edge))

        assert "disconnected" in caplog.text

    def test_invalid_tol(self, p3: Graph) -> None:
        with pytest.raises(ConfigError, match="tol must be positive"):
            eigenvector_centrality(make_operator(p3), tol=0.0)


class TestSpectralRadius:
    @pytest.mark.parametrize(
        ("fixture", "expected"),
        [("k3", 2.0), ("p2", 1.0), ("p3", SQRT2), ("star", SQRT3)],
    )
    def test_examples(
        self, fixture: str, expected: float, request: pytest.FixtureRequest
    ) -> None:
        g = request.getfixturevalue(fixture)
        assert spectral_radius(make_operator(g)) == pytest.approx(expected, abs=TOL)

    def test_edgeless(self) -> None:
        assert spectral_radius(make_operator(Graph.from_edges(["a", "b"], []))) == 0.0


class TestBonacich:
    def test_k3(self, k3: Graph) -> None:
        measure = bonacich(k3, 1.0, K3_BETA)

        assert measure.values == pytest.approx([K3_BONACICH] * 3, rel=1e-10)
        assert measure.params["spectral_radius"] == pytest.approx(2.0)

    def test_zero_beta_is_scaled_degree(self, p5: Graph) -> None:
        measure = bonacich(p5, 2.5, 0.0)
        assert np.array_equal(measure.values, 2.5 * degrees(p5))

    @pytest.mark.parametrize("beta", [0.5, -0.5, 1.0])
    def test_beta_outside_convergence_radius(self, k3: Graph, beta: float) -> None:
        with pytest.raises(ConfigError, match="must stay below"):
            bonacich(k3, 1.0, beta)

    def test_positive_beta_approaches_centrality(self) -> None:
        g = weighted_k4()
        op = make_operator(g)
        index = bonacich(op, 1.0, LIMIT_FRACTION / spectral_radius(op))
        centrality = eigenvector_centrality(op)

        tau = kendall_tau(index.values, centrality.values, KendallVariant.B)
        assert tau > LIMIT_TAU

    def test_newton_identity(self) -> None:
        rng = np.random.default_rng(SEED)
        checked = 0
        for k in range(IDENTITY_GRAPHS):
            n = int(rng.integers(4, 25))
            m = int(rng.integers(n - 1, n * (n - 1) // 2 + 1))
            g = random_connected_graph(n, m, SEED + k)
            radius = spectral_radius(make_operator(g))
            for gamma in IDENTITY_GAMMAS:
                if gamma**2 * radius >= 1:
                    continue
                newton, index = bonacich_newton_identity_check(g, gamma)

                assert newton == pytest.approx(index, rel=IDENTITY_RTOL)
                checked += 1
        assert checked > 0

    def test_identity_rejects_large_gamma(self, k3: Graph) -> None:
        with pytest.raises(ConfigError, match="below 1/r"):
            bonacich_newton_identity_check(k3, 1.0)

    def test_identity_rejects_non_positive_gamma(self, k3: Graph) -> None:
        with pytest.raises(ConfigError, match="gamma must be positive"):
            bonacich_newton_identity_check(k3, 0.0)


class TestShapley:
    def test_p3(self, p3: Graph) -> None:
        assert shapley_power(p3).values.tolist() == [0.5, 2.0, 0.5]

    def test_star(self, star: Graph) -> None:
        assert shapley_power(star).values.tolist() == [3.0, 1 / 3, 1 / 3, 1 / 3]

    def test_isolated_node_gets_zero(self, caplog: pytest.LogCaptureFixture) -> None:
        g = Graph.from_edges(["a", "b", "c"], [(0, 1)])

        with caplog.at_level(logging.WARNING):
            measure = shapley_power(g)

        assert measure.values.tolist() == [1.0, 1.0, 0.0]
        assert "isolated" in caplog.text

    def test_is_the_second_raw_sinkhorn_iterate(self) -> None:
        rng = np.random.default_rng(SEED)
        for k in range(SHAPLEY_GRAPHS):
            n = int(rng.integers(2, 40))
            m = int(rng.integers(n - 1, n * (n - 1) // 2 + 1))
            g = random_connected_graph(n, m, SEED + k)
            op = make_operator(g)
            second = sinkhorn_step(op, sinkhorn_step(op, np.ones(g.n)))

            assert np.array_equal(shapley_power(g).values, second)

    def test_total_is_the_number_of_nodes(self) -> None:
        for k in range(5):
            g = random_connected_graph(12, 20, SEED + k)
            assert float(shapley_power(g).values.sum()) == pytest.approx(g.n)


class TestNash:
    def test_p3_center_takes_everything(self, p3: Graph) -> None:
        measure = nash_power(p3)

        assert measure.values == pytest.approx([0.0, 1.0, 0.0], abs=NASH_ATOL)
        assert measure.params["converged"] is True

    def test_p2_splits_evenly(self, p2: Graph) -> None:
        assert nash_power(p2).values.tolist() == [NASH_HALF, NASH_HALF]

    def test_k3_is_stationary(self, k3: Graph) -> None:
        measure = nash_power(k3)

        assert measure.values.tolist() == [NASH_HALF] * 3
        assert measure.params["iterations"] == 1

    def test_p5_alternates(self, p5: Graph) -> None:
        measure = nash_power(p5)

        assert measure.params["converged"] is True
        assert measure.values == pytest.approx(
            [0.0, 1.0, 0.0, 1.0, 0.0], abs=NASH_FIXPOINT_ATOL
        )

    @pytest.mark.parametrize("rule", list(NegativeSurplus))
    def test_revenues_and_alternatives_stay_in_unit_interval(
        self, p5: Graph, rule: NegativeSurplus
    ) -> None:
        graphs = [p5, *(random_connected_graph(12, 20, SEED + k) for k in range(RANGE_GRAPHS))]
        for g in graphs:
            for state in nash_dynamics(g, negative_surplus=rule):
                assert np.all((state.R >= 0) & (state.R <= 1))
                assert np.all((state.L >= 0) & (state.L <= 1))

    def test_edge_revenues_always_sum_to_one(self, p5: Graph) -> None:
        for state in nash_dynamics(p5):
            assert state.R + state.R[state.reverse] == pytest.approx(
                np.ones(state.R.size)
            )

    def test_damped_dynamics_reach_the_same_point(self, p3: Graph) -> None:
        measure = nash_power(p3, damping=DAMPING)
        assert measure.values == pytest.approx([0.0, 1.0, 0.0], abs=NASH_ATOL)

    def test_literal_rule_on_p3(self, p3: Graph) -> None:
        measure = nash_power(p3, negative_surplus=NegativeSurplus.LITERAL)

        assert measure.values == pytest.approx([0.0, 1.0, 0.0], abs=NASH_ATOL)
        assert measure.params["negative_surplus"] == "literal"

    def test_isolated_and_edgeless(self) -> None:
        assert nash_power(Graph.from_edges(["a", "b", "c"], [(0, 1)])).values.tolist() == [
            NASH_HALF,
            NASH_HALF,
            0.0,
        ]
        assert nash_power(Graph.from_edges(["a"], [])).values.tolist() == [0.0]

    def test_loops_are_rejected(self) -> None:
        with pytest.raises(GraphError, match="loops"):
            nash_power(Graph.from_edges(["a", "b"], [(0, 1), (1, 1)]))

    @pytest.mark.parametrize("damping", [0.0, 1.5])
    def test_invalid_damping(self, p3: Graph, damping: float) -> None:
        with pytest.raises(ConfigError, match="damping"):
            list(nash_dynamics(p3, damping=damping))

    def test_iteration_cap_warns(
        self, p5: Graph, caplog: pytest.LogCaptureFixture
    ) -> None:
        with caplog.at_level(logging.WARNING):
            measure = nash_power(p5, max_iter=2)

        assert measure.params["converged"] is False
        assert "still moving" in caplog.text
