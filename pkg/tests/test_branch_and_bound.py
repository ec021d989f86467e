import numpy as np
import pandas as pd
import pytest

from conftest import make_network
from reluopt.models.network import ActivationKind, random_network
from reluopt.services.bound_tightening import obbt
from reluopt.services.bounds_engine import ia_bounds
from reluopt.services.branch_and_bound import BnbStatus, solve_adversarial, solve_min
from reluopt.services.region_explorer import enumerate_regions, region_oracle_min


def _close(value, expected):
    return abs(value - expected) <= 1e-6 * max(1.0, abs(expected))


class TestSolveMin:
    """Global minimization of the network output."""

    def test_one_neuron_network(self, one_neuron_net):
        result = solve_min(one_neuron_net)
        assert result.status == BnbStatus.OPTIMAL
        assert result.objective == pytest.approx(0.0, abs=1e-9)
        assert one_neuron_net.forward(result.x)[0] == pytest.approx(result.objective, abs=1e-9)

    def test_tiny_network(self, tiny_net):
        # out = relu(x1 + x2) - 2 relu(x1 - x2) + 0.5, minimized at (1, -1)
        result = solve_min(tiny_net)
        assert result.solved
        assert result.objective == pytest.approx(-3.5)
        assert result.x == pytest.approx([1.0, -1.0])

    @pytest.mark.parametrize("seed", range(30))
    def test_matches_region_oracle(self, seed):
        architectures = ([10], [6, 8], [10, 10], [5, 10, 5], [8, 8, 8], [10, 10, 10])
        net = random_network(architectures[seed % len(architectures)], seed=seed)
        result = solve_min(net)
        _, oracle = region_oracle_min(net)
        assert result.solved
        assert _close(result.objective, oracle)
        assert result.best_bound <= result.objective + 1e-9
        assert net.forward(result.x)[0] == pytest.approx(result.objective, abs=1e-12)
        assert np.all(result.x >= -1.0) and np.all(result.x <= 1.0)

    def test_obbt_bounds_give_same_optimum(self):
        net = random_network([6, 6], seed=8)
        plain = solve_min(net)
        tightened = solve_min(net, bounds=obbt(net, ia_bounds(net)).bounds)
        assert _close(tightened.objective, plain.objective)

    def test_clipped_network(self):
        net = random_network([5, 5], seed=2, activation=ActivationKind.clipped(1.0), scale=2.0)
        result = solve_min(net)
        grid = np.stack(np.meshgrid(np.linspace(-1, 1, 81), np.linspace(-1, 1, 81)), axis=-1).reshape(-1, 2)
        assert result.solved
        assert result.objective <= net.forward(grid).min() + 1e-9

    def test_multi_output_needs_coefficients(self):
        net = random_network([4], n_outputs=2, seed=0)
        with pytest.raises(ValueError):
            solve_min(net)
        result = solve_min(net, output_coefficients=[1.0, -1.0])
        assert result.objective == pytest.approx(float(np.array([1.0, -1.0]) @ net.forward(result.x)), abs=1e-12)

    def test_parallel_workers(self):
        net = random_network([6, 6], seed=1)
        serial = solve_min(net)
        parallel = solve_min(net, workers=2)
        assert _close(parallel.objective, serial.objective)

    def test_identity_network(self):
        net = make_network([([[1.0, 1.0]], [0.0])], [[0.0, 1.0], [0.0, 1.0]])
        result = solve_min(net)
        assert result.solved
        assert result.objective == pytest.approx(0.0, abs=1e-12)
        assert result.x == pytest.approx([0.0, 0.0], abs=1e-12)

    def test_branching_is_deterministic(self):
        net = random_network([8, 8], seed=6)
        first = solve_min(net)
        second = solve_min(net)
        assert first.nodes == second.nodes
        assert first.objective == second.objective
        assert np.array_equal(first.x, second.x)
        assert [row["outcome"] for row in first.trace] == [row["outcome"] for row in second.trace]

    def test_time_limit(self):
        net = random_network([10, 10], seed=0)
        result = solve_min(net, time_limit=0.0)
        assert result.status == BnbStatus.TIME_LIMIT
        assert result.x is not None
        assert result.to_dict()["status"] == "time_limit"

    def test_trace_csv(self, tiny_net, tmp_path):
        result = solve_min(tiny_net)
        result.write_trace(tmp_path / "trace.csv")
        frame = pd.read_csv(tmp_path / "trace.csv")
        assert list(frame.columns) == ["node", "depth", "bound", "incumbent", "outcome"]
        assert len(frame) == result.nodes
        assert frame["node"].iloc[0] == 0


class TestAdversarial:
    """Targeted attack objective over an l-infinity ball."""

    @pytest.fixture
    def classifier(self):
        return random_network([6, 6], n_outputs=3, seed=13)

    def test_zero_radius_is_forward_difference(self, classifier):
        x0 = np.array([0.2, -0.4])
        result = solve_adversarial(classifier, x0, 0.0, target=2, true_label=0)
        out = classifier.forward(x0)
        assert result.sense == "max"
        assert result.objective == pytest.approx(out[2] - out[0], abs=1e-9)

    def test_margin_grows_with_radius(self, classifier):
        x0 = np.array([0.1, 0.1])
        small = solve_adversarial(classifier, x0, 0.05, target=1, true_label=0)
        large = solve_adversarial(classifier, x0, 0.3, target=1, true_label=0)
        assert small.solved and large.solved
        assert large.objective >= small.objective - 1e-5
        assert np.all(np.abs(large.x - x0) <= 0.3 + 1e-12)
        out = classifier.forward(large.x)
        assert large.objective == pytest.approx(out[1] - out[0], abs=1e-12)

    def test_identity_network(self):
        net = make_network([([[1.0, 0.0], [0.0, 1.0]], [0.0, 0.0])], [[-2.0, 2.0], [-2.0, 2.0]])
        # maximize x1 - x2 over the unit ball around the origin
        result = solve_adversarial(net, [0.0, 0.0], 1.0, target=0, true_label=1)
        assert result.solved
        assert result.objective == pytest.approx(2.0, abs=1e-12)
        assert result.x == pytest.approx([1.0, -1.0], abs=1e-12)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_matches_brute_force(self, seed):
        net = random_network([8, 8], n_outputs=2, seed=seed)
        x0, delta = np.array([0.2, -0.1]), 0.4
        result = solve_adversarial(net, x0, delta, target=1, true_label=0)

        ball = np.column_stack([x0 - delta, x0 + delta])
        _, oracle = region_oracle_min(enumerate_regions(net, box=ball), objective=[1.0, -1.0])
        axes = [np.linspace(lo, hi, 201) for lo, hi in ball]
        grid = np.stack(np.meshgrid(*axes), axis=-1).reshape(-1, 2)
        out = net.forward(grid)
        assert result.solved
        assert abs(result.objective - (-oracle)) <= 1e-3
        assert result.objective >= np.max(out[:, 1] - out[:, 0]) - 1e-9

    def test_ball_is_clipped_to_box(self):
        net = make_network([([[1.0], [-1.0]], [0.0, 0.0]), ([[1.0, 0.0], [0.0, 1.0]], [0.0, 0.0])], [[0.0, 1.0]])
        # out1 - out0 = relu(-x) - relu(x) is maximized at x = 0 inside [0, 1]
        result = solve_adversarial(net, [0.5], 2.0, target=1, true_label=0)
        assert result.objective == pytest.approx(0.0, abs=1e-9)

    def test_invalid_labels(self, classifier):
        with pytest.raises(ValueError):
            solve_adversarial(classifier, [0.0, 0.0], 0.1, target=1, true_label=1)
        with pytest.raises(ValueError):
            solve_adversarial(classifier, [0.0, 0.0], 0.1, target=3, true_label=0)
        with pytest.raises(ValueError):
            solve_adversarial(classifier, [0.0, 0.0], -0.1, target=1, true_label=0)
