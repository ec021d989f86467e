import numpy as np
import pytest

from conftest import make_network
from reluopt import EncodingError
from reluopt.models.network import ActivationKind, random_network
from reluopt.services.bounds_engine import ia_bounds
from reluopt.services.lp_solver import LpStatus, Sense, solve_lp
from reluopt.services.milp_encoder import encode


def _pinned(model, x, binaries=None):
    """LP with the inputs fixed to ``x`` and the binaries fixed to ``binaries`` (forward arm by default)."""
    values = model.assignment(x)
    lower, upper = model.lp.lower.copy(), model.lp.upper.copy()
    lower[model.input_vars] = upper[model.input_vars] = x
    chosen = values[list(model.binaries)] if binaries is None else np.asarray(binaries, dtype=np.float64)
    lower[list(model.binaries)] = upper[list(model.binaries)] = chosen
    return model.lp.with_bounds(lower, upper)


class TestReluEncoding:
    """Big-M encoding of ReLU networks."""

    def test_forward_assignment_is_feasible(self):
        net = random_network([6, 6], seed=1)
        model = encode(net, ia_bounds(net))
        np.random.seed(42)
        for x in np.random.uniform(-1, 1, size=(1000, 2)):
            values = model.assignment(x)
            assert model.lp.residual(values) <= 1e-9
            assert values[model.output_vars] == pytest.approx(net.forward(x))

    def test_fixed_input_pins_the_output(self):
        net = random_network([6, 6], seed=1)
        model = encode(net, ia_bounds(net))
        c = model.output_objective([1.0])
        np.random.seed(7)
        for x in np.random.uniform(-1, 1, size=(100, 2)):
            lp = _pinned(model, x)
            low = solve_lp(lp.with_objective(c, Sense.MIN))
            high = solve_lp(lp.with_objective(c, Sense.MAX))
            expected = net.forward(x)[0]
            assert low.objective == pytest.approx(expected, abs=1e-7)
            assert high.objective == pytest.approx(expected, abs=1e-7)

    def test_zero_pre_activation(self, one_neuron_net):
        model = encode(one_neuron_net, ia_bounds(one_neuron_net))
        values = model.assignment([-0.5])
        assert model.lp.residual(values) <= 1e-12
        assert values[model.binaries[0]] == 0.0

    def test_stable_neurons_have_no_binaries(self):
        net = make_network(
            [([[1.0], [1.0], [1.0]], [2.0, -2.0, 0.0]), ([[1.0, 1.0, 1.0]], [0.0])],
            [[-1.0, 1.0]],
        )
        model = encode(net, ia_bounds(net))
        assert model.n_binaries == 1
        assert list(model.neuron_binaries) == [(1, 2)]
        # stably inactive neuron is fixed at zero
        h = model.hidden_vars[0][1]
        assert model.lp.lower[h] == 0.0 and model.lp.upper[h] == 0.0

    def test_relaxation_bounds_the_minimum(self):
        net = random_network([8, 8], seed=3)
        model = encode(net, ia_bounds(net))
        relaxed = solve_lp(model.lp.with_objective(model.output_objective([1.0])))
        grid = np.stack(np.meshgrid(np.linspace(-1, 1, 41), np.linspace(-1, 1, 41)), axis=-1).reshape(-1, 2)
        assert relaxed.is_optimal
        assert relaxed.objective <= net.forward(grid).min() + 1e-9

    def test_degenerate_input_box(self, tiny_net):
        box = np.array([[0.3, 0.3], [-0.2, -0.2]])
        model = encode(tiny_net, ia_bounds(tiny_net, input_box=box), input_box=box)
        c = model.output_objective([1.0])
        low = solve_lp(model.lp.with_objective(c, Sense.MIN))
        high = solve_lp(model.lp.with_objective(c, Sense.MAX))
        expected = tiny_net.forward([0.3, -0.2])[0]
        assert low.objective == pytest.approx(expected)
        assert high.objective == pytest.approx(expected)


class TestClippedEncoding:
    """Clipped-ReLU encodings with one or two binaries."""

    @pytest.mark.parametrize("clip", [2.0, 5.0])
    def test_assignment_is_feasible(self, clip):
        net = random_network([6, 6], seed=4, activation=ActivationKind.clipped(clip), scale=3.0)
        model = encode(net, ia_bounds(net))
        np.random.seed(42)
        for x in np.random.uniform(-1, 1, size=(1000, 2)):
            assert model.lp.residual(model.assignment(x)) <= 1e-9

    def test_saturation_boundary(self):
        # pre-activation 3x on [-1, 1] crosses both 0 and M = 2
        net = make_network([([[3.0]], [0.0]), ([[1.0]], [0.0])], [[-1.0, 1.0]], ActivationKind.clipped(2.0))
        model = encode(net, ia_bounds(net))
        assert len(model.neuron_binaries[(1, 0)]) == 2
        for x in (-1.0, 0.0, 0.5, 2.0 / 3.0, 1.0):
            values = model.assignment([x])
            assert model.lp.residual(values) <= 1e-12
            assert values[model.output_vars[0]] == pytest.approx(min(max(3 * x, 0.0), 2.0))

    def test_only_saturated_arm_is_feasible(self):
        # pre-activation 10x in [-10, 10]; at x = 0.7 it is 7 > M = 2
        net = make_network([([[10.0]], [0.0]), ([[1.0]], [0.0])], [[-1.0, 1.0]], ActivationKind.clipped(2.0))
        model = encode(net, ia_bounds(net))
        h = model.hidden_vars[0][0]
        c = np.zeros(model.lp.n_vars)
        c[h] = 1.0
        for z1 in (0.0, 1.0):
            for z2 in (0.0, 1.0):
                lp = _pinned(model, [0.7], binaries=[z1, z2])
                low = solve_lp(lp.with_objective(c, Sense.MIN))
                if (z1, z2) == (1.0, 1.0):
                    high = solve_lp(lp.with_objective(c, Sense.MAX))
                    assert low.is_optimal and high.is_optimal
                    assert low.objective == pytest.approx(2.0, abs=1e-9)
                    assert high.objective == pytest.approx(2.0, abs=1e-9)
                else:
                    assert low.status == LpStatus.INFEASIBLE

    @pytest.mark.parametrize("clip", [2.0, 5.0])
    def test_fixed_input_pins_the_output(self, clip):
        net = random_network([6, 6], seed=4, activation=ActivationKind.clipped(clip), scale=3.0)
        model = encode(net, ia_bounds(net))
        c = model.output_objective([1.0])
        np.random.seed(7)
        for x in np.random.uniform(-1, 1, size=(100, 2)):
            lp = _pinned(model, x)
            low = solve_lp(lp.with_objective(c, Sense.MIN))
            high = solve_lp(lp.with_objective(c, Sense.MAX))
            expected = net.forward(x)[0]
            assert low.objective == pytest.approx(expected, abs=1e-7)
            assert high.objective == pytest.approx(expected, abs=1e-7)

    def test_positive_lower_bound_uses_one_binary(self):
        # pre-activation x + 2 in [1, 3] with M = 2
        net = make_network([([[1.0]], [2.0]), ([[1.0]], [0.0])], [[-1.0, 1.0]], ActivationKind.clipped(2.0))
        model = encode(net, ia_bounds(net))
        assert len(model.neuron_binaries[(1, 0)]) == 1
        for x in (-1.0, -0.5, 0.0, 0.5, 1.0):
            assert model.lp.residual(model.assignment([x])) <= 1e-12

    def test_saturated_neuron_is_constant(self):
        net = make_network([([[1.0]], [5.0]), ([[1.0]], [0.0])], [[-1.0, 1.0]], ActivationKind.clipped(2.0))
        model = encode(net, ia_bounds(net))
        h = model.hidden_vars[0][0]
        assert model.n_binaries == 0
        assert model.lp.lower[h] == model.lp.upper[h] == 2.0


class TestEncodingErrors:
    """Inputs that cannot be encoded."""

    def test_bounds_shape_mismatch(self):
        net = random_network([4], seed=0)
        with pytest.raises(EncodingError):
            encode(net, ia_bounds(random_network([3], seed=0)))

    def test_prefix_encoding_has_no_outputs(self):
        net = random_network([4, 4], seed=0)
        model = encode(net, ia_bounds(net), hidden_layers=1)
        assert model.output_vars.size == 0
        assert len(model.hidden_vars) == 1
        with pytest.raises(EncodingError):
            model.output_objective([1.0])

    def test_wrong_coefficient_count(self, tiny_net):
        model = encode(tiny_net, ia_bounds(tiny_net))
        with pytest.raises(EncodingError):
            model.output_objective([1.0, 1.0])

    def test_lp_text_lists_binaries(self, one_neuron_net):
        text = encode(one_neuron_net, ia_bounds(one_neuron_net)).to_lp_text()
        assert "Binaries\n z1_0" in text
        assert "y_0" in text
