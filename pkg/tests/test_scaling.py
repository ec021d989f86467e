import numpy as np
import pytest

from conftest import make_network
from reluopt import UnsupportedActivationError
from reluopt.models.network import ActivationKind, random_network
from reluopt.services.bounds_engine import ia_bounds
from reluopt.services.scaling_optimizer import (
    ScalingStatus,
    build_problem,
    check_equivalence,
    check_points,
    scale_network,
    solve_scaling,
)


class TestScalingProblem:
    """Objective and gradient of the log-factor problem."""

    @pytest.fixture
    def problem(self):
        return build_problem(random_network([5, 4], seed=9))

    def test_objective_at_zero_is_l1_norm(self):
        net = random_network([5, 4], seed=9)
        assert build_problem(net).objective(np.zeros(9)) == pytest.approx(net.l1_norm())

    def test_gradient_matches_central_differences(self, problem):
        np.random.seed(42)
        c = np.random.uniform(-0.5, 0.5, size=problem.n_vars)
        grad = problem.gradient(c)
        h = 1e-6
        for j in range(problem.n_vars):
            e = np.zeros(problem.n_vars)
            e[j] = h
            numeric = (problem.objective(c + e) - problem.objective(c - e)) / (2 * h)
            assert grad[j] == pytest.approx(numeric, rel=1e-6, abs=1e-8)

    def test_midpoint_convexity(self, problem):
        rng = np.random.default_rng(1)
        for _ in range(20):
            a, b = rng.normal(size=(2, problem.n_vars))
            assert problem.objective((a + b) / 2) <= (problem.objective(a) + problem.objective(b)) / 2 + 1e-12

    def test_layer_split(self, problem):
        parts = problem.split(np.arange(problem.n_vars))
        assert [p.size for p in parts] == [5, 4]


class TestClosedForms:
    """Single-neuron problems with known optima."""

    def test_two_weight_neuron(self):
        # 2c + 8/c is minimized at c = 2 with value 8
        net = make_network([([[2.0]], [0.0]), ([[8.0]], [0.0])], [[-1.0, 1.0]])
        scaled, solution = scale_network(net)
        assert solution.status == ScalingStatus.CONVERGED
        assert solution.factors[0][0] == pytest.approx(2.0, abs=1e-6)
        assert solution.objective_after == pytest.approx(8.0)
        assert scaled.layers[0].weights[0, 0] == pytest.approx(4.0, abs=1e-6)

    def test_neuron_with_bias(self, one_neuron_net):
        # (2 + 1) c + 4 / c is minimized at c = 2 / sqrt(3)
        scaled, solution = scale_network(one_neuron_net)
        assert solution.factors[0][0] == pytest.approx(2.0 / np.sqrt(3.0), abs=1e-6)
        assert solution.objective_before == pytest.approx(7.0)
        assert solution.objective_after == pytest.approx(4.0 * np.sqrt(3.0), rel=1e-9)
        assert scaled.l1_norm() == pytest.approx(solution.objective_after, rel=1e-9)

    def test_balanced_network_is_unchanged(self):
        net = make_network([([[3.0]], [0.0]), ([[3.0]], [1.0])], [[-1.0, 1.0]])
        scaled, solution = scale_network(net)
        assert solution.iterations == 0
        assert solution.factors[0][0] == 1.0
        assert np.max(np.abs(scaled.layers[0].weights - net.layers[0].weights)) <= 1e-12
        assert solution.objective_after == pytest.approx(net.l1_norm())

    def test_iteration_cap(self):
        net = make_network([([[2.0]], [0.0]), ([[8.0]], [0.0])], [[-1.0, 1.0]])
        solution = solve_scaling(build_problem(net), max_iterations=1)
        assert solution.status == ScalingStatus.MAX_ITERATIONS
        assert solution.iterations == 1
        assert solution.objective_after < solution.objective_before


class TestScaleNetwork:
    """End-to-end rescaling of random networks."""

    @pytest.fixture
    def net(self):
        return random_network([10, 10, 10], seed=17)

    def test_function_is_preserved(self, net):
        scaled, _ = scale_network(net)
        rng = np.random.default_rng(0)
        x = rng.uniform(-1, 1, size=(1000, 2))
        assert np.max(np.abs(scaled.forward(x) - net.forward(x))) <= 1e-6

    def test_l1_norm_decreases(self, net):
        scaled, solution = scale_network(net)
        assert solution.objective_before == pytest.approx(net.l1_norm())
        assert scaled.l1_norm() <= net.l1_norm() + 1e-12
        assert scaled.l1_norm() == pytest.approx(solution.objective_after, rel=1e-9)
        assert solution.gradient_norm <= 1e-6

    def test_output_interval_bounds_are_unchanged(self, net):
        scaled, _ = scale_network(net)
        original, rescaled = ia_bounds(net), ia_bounds(scaled)
        assert np.allclose(rescaled.lower[-1], original.lower[-1], rtol=1e-8)
        assert np.allclose(rescaled.upper[-1], original.upper[-1], rtol=1e-8)

    def test_dead_neurons_keep_unit_factor(self):
        net = make_network(
            [([[1.0, 2.0], [3.0, 1.0]], [0.5, 0.5]), ([[4.0, 0.0]], [0.0])],
            [[-1.0, 1.0], [-1.0, 1.0]],
        )
        _, solution = scale_network(net)
        assert solution.factors[0][1] == 1.0
        assert solution.factors[0][0] != pytest.approx(1.0)

    def test_unbounded_direction_is_clamped(self):
        # a neuron without incoming weights keeps shrinking its outgoing weight
        net = make_network([([[0.0], [1.0]], [0.0, 0.0]), ([[8.0, 1.0]], [0.0])], [[-1.0, 1.0]])
        scaled, solution = scale_network(net)
        assert solution.status == ScalingStatus.CLAMPED
        assert solution.clamped == 1
        assert solution.log_factors[0][0] == pytest.approx(20.0)
        x = np.linspace(-1, 1, 11).reshape(-1, 1)
        assert np.allclose(scaled.forward(x), net.forward(x), atol=1e-9)

    def test_no_hidden_layers(self):
        net = make_network([([[1.0, 2.0]], [0.5])], [[0.0, 1.0], [0.0, 1.0]])
        scaled, solution = scale_network(net)
        assert scaled is net
        assert solution.objective_after == solution.objective_before == pytest.approx(3.5)

    def test_clipped_is_rejected(self):
        net = random_network([4], activation=ActivationKind.clipped(2.0))
        with pytest.raises(UnsupportedActivationError):
            scale_network(net)
        with pytest.raises(UnsupportedActivationError):
            build_problem(net)

    def test_equivalence_check_reports_worst_point(self, net):
        points = check_points(net, 16, seed=1)
        assert points.shape == (16, 2)
        assert np.all(np.abs(points) <= 1.0)
        deviation, worst = check_equivalence(net, net, points)
        assert deviation == 0.0
        assert worst.shape == (2,)
