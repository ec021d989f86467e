import numpy as np
import pytest

from reluopt.models.network import ActivationKind, Layer, Network


def make_network(layers, box, activation=None):
    """Network from a list of (W, b) pairs; the last pair is the identity output layer."""
    activation = activation or ActivationKind.relu()
    built = []
    for k, (w, b) in enumerate(layers):
        kind = activation if k < len(layers) - 1 else ActivationKind.identity()
        built.append(Layer(np.array(w, dtype=np.float64), np.array(b, dtype=np.float64), kind))
    return Network(tuple(built), np.array(box, dtype=np.float64))


@pytest.fixture
def one_neuron_net():
    """h(x) = 4 * relu(2x + 1) on [-1, 1]."""
    return make_network([([[2.0]], [1.0]), ([[4.0]], [0.0])], [[-1.0, 1.0]])


@pytest.fixture
def tiny_net():
    """2 inputs, hidden layer of 2, one output, box [-1, 1]^2."""
    return make_network(
        [([[1.0, 1.0], [1.0, -1.0]], [0.0, 0.0]), ([[1.0, -2.0]], [0.5])],
        [[-1.0, 1.0], [-1.0, 1.0]],
    )
