import numpy as np
import pytest

from conftest import make_network
from reluopt import BoundsRelationError
from reluopt.models.network import ActivationKind, ScalingFactors, random_network
from reluopt.services.bounds_engine import (
    BoundsSet,
    NeuronStatus,
    Provenance,
    check_soundness,
    classify,
    ia_bounds,
    interval_affine,
    neuron_status,
    propagate_output_bounds,
    scaled_bounds_relation,
)


class TestIntervalArithmetic:
    """Interval-arithmetic bounds and their bookkeeping."""

    def test_hand_computed_bounds(self, tiny_net):
        bounds = ia_bounds(tiny_net)
        assert bounds.lower[0].tolist() == [-2.0, -2.0]
        assert bounds.upper[0].tolist() == [2.0, 2.0]
        # out = h1 - 2 h2 + 0.5 with h in [0, 2]
        assert bounds.lower[1].tolist() == [-3.5]
        assert bounds.upper[1].tolist() == [2.5]
        assert bounds.provenance == Provenance.IA

    def test_interval_affine_is_exact_for_one_layer(self):
        w = np.array([[1.0, -2.0], [0.5, 3.0]])
        b = np.array([0.1, -0.2])
        lo, hi = interval_affine(w, b, np.array([-1.0, 0.0]), np.array([2.0, 1.0]))
        corners = np.array([[x, y] for x in (-1.0, 2.0) for y in (0.0, 1.0)]) @ w.T + b
        assert np.allclose(lo, corners.min(axis=0))
        assert np.allclose(hi, corners.max(axis=0))

    def test_degenerate_box(self, tiny_net):
        box = np.array([[0.25, 0.25], [0.25, 0.25]])
        bounds = ia_bounds(tiny_net, input_box=box)
        value = tiny_net.forward([0.25, 0.25])[0]
        assert bounds.lower[-1][0] == pytest.approx(value)
        assert bounds.upper[-1][0] == pytest.approx(value)

    def test_invalid_box(self, tiny_net):
        with pytest.raises(ValueError):
            ia_bounds(tiny_net, input_box=np.array([[1.0, 0.0], [0.0, 1.0]]))

    def test_clipped_bounds_are_capped(self):
        net = make_network([([[3.0]], [0.0]), ([[1.0]], [0.0])], [[-1.0, 1.0]], ActivationKind.clipped(2.0))
        bounds = ia_bounds(net)
        assert bounds.layer(1)[1].tolist() == [3.0]
        assert bounds.upper[-1].tolist() == [2.0]

    def test_crossed_bounds_rejected(self):
        with pytest.raises(ValueError, match="exceeds"):
            BoundsSet((np.array([1.0]),), (np.array([0.0]),), Provenance.IA, np.array([[0.0, 1.0]]))

    def test_save_and_load(self, tmp_path):
        net = random_network([5, 4], seed=2)
        bounds = ia_bounds(net)
        bounds.save(tmp_path / "bounds.json")
        loaded = BoundsSet.load(tmp_path / "bounds.json")
        for a, b in zip(loaded.lower + loaded.upper, bounds.lower + bounds.upper):
            assert np.array_equal(a, b)
        assert loaded.provenance == bounds.provenance

    def test_width_profile(self, tiny_net):
        bounds = ia_bounds(tiny_net)
        assert bounds.width_profile() == [4.0, 6.0]
        assert bounds.mean_hidden_width() == 4.0

    def test_propagate_output_bounds(self):
        net = random_network([6, 6], seed=4)
        bounds = ia_bounds(net)
        lo, hi = propagate_output_bounds(net, bounds)
        assert np.allclose(lo, bounds.lower[-1])
        assert np.allclose(hi, bounds.upper[-1])


class TestClassification:
    """Stability of neurons from their bounds."""

    def test_strict_sign_tests(self):
        assert neuron_status(0.1, 2.0) == NeuronStatus.STABLY_ACTIVE
        assert neuron_status(-2.0, -0.1) == NeuronStatus.STABLY_INACTIVE
        assert neuron_status(0.0, 1.0) == NeuronStatus.UNSTABLE
        assert neuron_status(-1.0, 0.0) == NeuronStatus.UNSTABLE

    def test_classify_counts(self):
        net = make_network(
            [([[1.0], [1.0], [1.0]], [2.0, -2.0, 0.0]), ([[1.0, 1.0, 1.0]], [0.0])],
            [[-1.0, 1.0]],
        )
        summary = classify(ia_bounds(net))
        assert summary.statuses[0] == [
            NeuronStatus.STABLY_ACTIVE, NeuronStatus.STABLY_INACTIVE, NeuronStatus.UNSTABLE
        ]
        assert summary.stable_count == 2
        assert summary.stable_percentage == pytest.approx(2 / 3)
        assert summary.unstable_count == 1

    def test_no_hidden_neurons_is_fully_stable(self):
        net = make_network([([[1.0, 2.0]], [0.0])], [[0.0, 1.0], [0.0, 1.0]])
        assert classify(ia_bounds(net)).stable_percentage == 1.0


class TestSoundness:
    """Sampling checks of bound validity."""

    @pytest.mark.parametrize("activation", [ActivationKind.relu(), ActivationKind.clipped(2.0)])
    def test_ia_bounds_are_sound(self, activation):
        net = random_network([10, 10, 10], seed=6, activation=activation)
        outcome = check_soundness(net, ia_bounds(net), n_samples=20_000, seed=1)
        assert outcome["violations"] == 0

    def test_detects_unsound_bounds(self, tiny_net):
        bounds = ia_bounds(tiny_net)
        shrunk = bounds.replace(lower=[np.zeros(2), np.zeros(1)])
        outcome = check_soundness(tiny_net, shrunk, n_samples=2000)
        assert outcome["violations"] > 0
        assert outcome["max_excess"] > 0.5


class TestScaledRelation:
    """IA bounds commute with positive per-neuron scaling."""

    @pytest.fixture
    def net(self):
        return random_network([8, 8, 8], seed=12)

    def test_relation_holds(self, net):
        np.random.seed(42)
        factors = ScalingFactors(tuple(np.random.uniform(0.2, 5.0, size=n) for n in net.hidden_sizes))
        record = scaled_bounds_relation(net, factors)
        assert record.max_hidden_deviation <= 1e-8
        assert record.max_output_deviation <= 1e-8

    def test_relation_violation_is_reported(self, net):
        factors = ScalingFactors.ones(net)
        with pytest.raises(BoundsRelationError) as info:
            scaled_bounds_relation(net, factors, tolerance=-1.0)
        assert "deviation" in info.value.worst
