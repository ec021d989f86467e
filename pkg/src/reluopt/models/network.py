"""
Feed-forward network model.

Immutable dense networks with ReLU / clipped-ReLU hidden layers and an identity
output layer, forward evaluation, equivalent rescaling and the JSON file format.
"""
import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .. import DimensionMismatchError, NetworkFormatError, UnsupportedActivationError

logger = logging.getLogger(__name__)


class Activation(str, Enum):
    RELU = "relu"
    CLIPPED_RELU = "clipped_relu"
    IDENTITY = "identity"


@dataclass(frozen=True)
class ActivationKind:
    """Activation of one layer; ``clip`` is the threshold M of a clipped ReLU."""

    kind: Activation
    clip: Optional[float] = None

    def __post_init__(self):
        if self.kind == Activation.CLIPPED_RELU:
            if self.clip is None or not np.isfinite(self.clip) or self.clip <= 0:
                raise NetworkFormatError(f"clipped ReLU requires a finite clip M > 0, got {self.clip}")
        elif self.clip is not None:
            raise NetworkFormatError(f"clip is only valid for clipped_relu, not {self.kind.value}")

    @classmethod
    def relu(cls) -> "ActivationKind":
        return cls(Activation.RELU)

    @classmethod
    def clipped(cls, clip: float) -> "ActivationKind":
        return cls(Activation.CLIPPED_RELU, float(clip))

    @classmethod
    def identity(cls) -> "ActivationKind":
        return cls(Activation.IDENTITY)

    @property
    def is_clipped(self) -> bool:
        return self.kind == Activation.CLIPPED_RELU

    def apply(self, values: np.ndarray) -> np.ndarray:
        """Element-wise activation."""
        if self.kind == Activation.IDENTITY:
            return values
        if self.kind == Activation.RELU:
            return np.maximum(values, 0.0)
        return np.maximum(0.0, np.minimum(self.clip, values))

    def apply_interval(self, lower: np.ndarray, upper: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Image of the interval [lower, upper] under the (monotone) activation."""
        return self.apply(lower), self.apply(upper)

    def __str__(self) -> str:
        if self.is_clipped:
            return f"clipped_relu({self.clip:g})"
        return self.kind.value


@dataclass(frozen=True, eq=False)
class Layer:
    """Dense layer ``s(W x + b)``; ``weights`` is n_out x n_in."""

    weights: np.ndarray
    bias: np.ndarray
    activation: ActivationKind

    def __post_init__(self):
        weights = np.array(self.weights, dtype=np.float64)
        bias = np.array(self.bias, dtype=np.float64).reshape(-1)
        if weights.ndim != 2:
            raise NetworkFormatError(f"weights must be a matrix, got shape {weights.shape}", "weights")
        if bias.shape[0] != weights.shape[0]:
            raise NetworkFormatError(
                f"bias length {bias.shape[0]} does not match {weights.shape[0]} weight rows", "bias"
            )
        if not np.all(np.isfinite(weights)):
            raise NetworkFormatError("non-finite weight", "weights")
        if not np.all(np.isfinite(bias)):
            raise NetworkFormatError("non-finite bias", "bias")
        weights.setflags(write=False)
        bias.setflags(write=False)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "bias", bias)

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Layer):
            return NotImplemented
        return (
            self.activation == other.activation
            and np.array_equal(self.weights, other.weights)
            and np.array_equal(self.bias, other.bias)
        )


@dataclass(frozen=True, eq=False)
class ScalingFactors:
    """Positive per-neuron factors c^(k), one vector per hidden layer."""

    factors: Tuple[np.ndarray, ...]

    def __post_init__(self):
        cleaned = []
        for k, c in enumerate(self.factors, start=1):
            c = np.array(c, dtype=np.float64).reshape(-1)
            if not np.all(np.isfinite(c)) or np.any(c <= 0):
                raise ValueError(f"scaling factors of hidden layer {k} must be finite and > 0")
            c.setflags(write=False)
            cleaned.append(c)
        object.__setattr__(self, "factors", tuple(cleaned))

    @classmethod
    def ones(cls, net: "Network") -> "ScalingFactors":
        return cls(tuple(np.ones(layer.n_out) for layer in net.hidden_layers))

    @classmethod
    def from_log(cls, log_factors: Sequence[np.ndarray]) -> "ScalingFactors":
        return cls(tuple(np.exp(np.asarray(c, dtype=np.float64)) for c in log_factors))

    def __len__(self) -> int:
        return len(self.factors)

    def __getitem__(self, k: int) -> np.ndarray:
        return self.factors[k]

    def to_dict(self) -> Dict:
        return {"factors": [c.tolist() for c in self.factors]}


@dataclass(frozen=True, eq=False)
class Network:
    """
    Immutable feed-forward network h: R^{n_x} -> R^{n_J}.

    Hidden layers share one ReLU or clipped-ReLU activation; the last layer is
    the identity. ``input_bounds`` is the box every downstream procedure uses.
    """

    layers: Tuple[Layer, ...]
    input_bounds: np.ndarray

    def __post_init__(self):
        layers = tuple(self.layers)
        box = np.array(self.input_bounds, dtype=np.float64)
        if not layers:
            raise NetworkFormatError("a network needs at least one layer", "layers")
        if box.ndim != 2 or box.shape[1] != 2:
            raise NetworkFormatError(f"input_bounds must be a list of [lo, hi] pairs, got shape {box.shape}",
                                     "input_bounds")
        if not np.all(np.isfinite(box)):
            raise NetworkFormatError("input bounds must be finite", "input_bounds")
        if np.any(box[:, 0] >= box[:, 1]):
            raise NetworkFormatError("input bounds need lo < hi in every dimension", "input_bounds")

        width = box.shape[0]
        for k, layer in enumerate(layers, start=1):
            if layer.n_in != width:
                raise NetworkFormatError(
                    f"expects {layer.n_in} inputs but the previous layer provides {width}", f"layer {k}"
                )
            width = layer.n_out

        if layers[-1].activation.kind != Activation.IDENTITY:
            raise NetworkFormatError("the final layer must use the identity activation", f"layer {len(layers)}")
        hidden_kinds = {layer.activation for layer in layers[:-1]}
        if any(kind.kind == Activation.IDENTITY for kind in hidden_kinds):
            raise NetworkFormatError("hidden layers must be relu or clipped_relu", "layers")
        if len(hidden_kinds) > 1:
            raise NetworkFormatError("all hidden layers must share one activation", "layers")

        box.setflags(write=False)
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "input_bounds", box)

    # Shape helpers -------------------------------------------------------

    @property
    def depth(self) -> int:
        """Number of layers J (hidden layers plus output layer)."""
        return len(self.layers)

    @property
    def n_inputs(self) -> int:
        return self.input_bounds.shape[0]

    @property
    def n_outputs(self) -> int:
        return self.layers[-1].n_out

    @property
    def hidden_layers(self) -> Tuple[Layer, ...]:
        return self.layers[:-1]

    @property
    def hidden_sizes(self) -> List[int]:
        return [layer.n_out for layer in self.hidden_layers]

    @property
    def n_hidden(self) -> int:
        return int(sum(self.hidden_sizes))

    @property
    def hidden_activation(self) -> Optional[ActivationKind]:
        return self.layers[0].activation if self.depth > 1 else None

    @property
    def is_relu(self) -> bool:
        """True when every hidden layer is a plain ReLU (or there is none)."""
        return all(layer.activation.kind == Activation.RELU for layer in self.hidden_layers)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Network):
            return NotImplemented
        return (
            len(self.layers) == len(other.layers)
            and all(a == b for a, b in zip(self.layers, other.layers))
            and np.array_equal(self.input_bounds, other.input_bounds)
        )

    # Evaluation ------------------------------------------------------------

    def _check_input(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1:] != (self.n_inputs,) or x.ndim > 2:
            raise DimensionMismatchError(f"expected input of length {self.n_inputs}, got shape {x.shape}")
        return x

    def forward(self, x) -> np.ndarray:
        """
        Evaluate the network.

        Args:
            x: Input vector (n_x,) or batch (N, n_x); need not lie in the box.

        Returns:
            Output vector (n_J,) or batch (N, n_J)
        """
        return self.forward_trace(x)[1]

    def forward_trace(self, x) -> Tuple[List[np.ndarray], np.ndarray]:
        """
        Evaluate the network and keep every pre-activation value.

        Returns:
            (pre_activations, output) where pre_activations[k] holds
            W^(k+1) x^(k) + b^(k+1) for every layer including the last.
        """
        value = self._check_input(x)
        pre_activations = []
        for layer in self.layers:
            pre = value @ layer.weights.T + layer.bias
            pre_activations.append(pre)
            value = layer.activation.apply(pre)
        return pre_activations, value

    def activation_pattern(self, x) -> np.ndarray:
        """Boolean on/off state (pre-activation > 0) of all hidden neurons."""
        pre, _ = self.forward_trace(x)
        if self.depth == 1:
            return np.zeros(np.shape(x)[:-1] + (0,), dtype=bool)
        return np.concatenate([p > 0 for p in pre[:-1]], axis=-1)

    # Validation ------------------------------------------------------------

    def dead_neurons(self) -> List[Tuple[int, int]]:
        """Hidden neurons (layer, index), 1-based layer, whose outgoing weights are all zero."""
        dead = []
        for k in range(1, self.depth):
            outgoing = self.layers[k].weights
            for i in np.flatnonzero(~np.any(outgoing != 0.0, axis=0)):
                dead.append((k, int(i)))
        if dead:
            logger.info(f"Network has {len(dead)} dead neurons")
        return dead

    def l1_norm(self) -> float:
        """Sum of absolute values of all weights and biases."""
        return float(sum(np.abs(layer.weights).sum() + np.abs(layer.bias).sum() for layer in self.layers))

    # Transformations -------------------------------------------------------

    def with_layers(self, layers: Sequence[Layer]) -> "Network":
        return Network(tuple(layers), self.input_bounds)

    def apply_scaling(self, scaling: ScalingFactors) -> "Network":
        """
        Equivalent rescaling via positive homogeneity of ReLU.

        Row i of layer k (weights and bias) is multiplied by c_i^(k) and column j
        of layer k+1 is divided by c_j^(k); the output layer is only divided.
        """
        if not self.is_relu:
            raise UnsupportedActivationError("scaling is only defined for plain ReLU networks")
        if len(scaling) != self.depth - 1:
            raise ValueError(f"expected scaling factors for {self.depth - 1} hidden layers, got {len(scaling)}")
        for k, (c, layer) in enumerate(zip(scaling.factors, self.hidden_layers), start=1):
            if c.shape[0] != layer.n_out:
                raise ValueError(f"hidden layer {k} has {layer.n_out} neurons but {c.shape[0]} factors")

        scaled = []
        previous = np.ones(self.n_inputs)
        for k, layer in enumerate(self.layers):
            current = scaling[k] if k < self.depth - 1 else np.ones(layer.n_out)
            weights = layer.weights * current[:, None] / previous[None, :]
            bias = layer.bias * current
            scaled.append(Layer(weights, bias, layer.activation))
            previous = current
        return self.with_layers(scaled)

    # Serialization ---------------------------------------------------------

    def to_dict(self) -> Dict:
        layers = []
        for layer in self.layers:
            entry = {
                "weights": layer.weights.tolist(),
                "bias": layer.bias.tolist(),
                "activation": layer.activation.kind.value,
            }
            if layer.activation.is_clipped:
                entry["clip"] = layer.activation.clip
            layers.append(entry)
        return {"input_bounds": self.input_bounds.tolist(), "layers": layers}

    @classmethod
    def from_dict(cls, data: Dict) -> "Network":
        if not isinstance(data, dict):
            raise NetworkFormatError("top level must be an object")
        if "input_bounds" not in data:
            raise NetworkFormatError("missing field", "input_bounds")
        if not isinstance(data.get("layers"), list):
            raise NetworkFormatError("missing or malformed field", "layers")

        layers = []
        for k, entry in enumerate(data["layers"], start=1):
            location = f"layer {k}"
            if not isinstance(entry, dict):
                raise NetworkFormatError("layer entry must be an object", location)
            for key in ("weights", "bias", "activation"):
                if key not in entry:
                    raise NetworkFormatError(f"missing field '{key}'", location)
            try:
                kind = Activation(entry["activation"])
            except ValueError:
                raise NetworkFormatError(f"unknown activation '{entry['activation']}'", location) from None
            if kind == Activation.CLIPPED_RELU and "clip" not in entry:
                raise NetworkFormatError("clipped_relu requires 'clip'", location)
            try:
                clip = float(entry["clip"]) if kind == Activation.CLIPPED_RELU else None
                activation = ActivationKind(kind, clip)
                weights = np.array(entry["weights"], dtype=np.float64)
                bias = np.array(entry["bias"], dtype=np.float64)
                layers.append(Layer(weights, bias, activation))
            except NetworkFormatError as exc:
                raise NetworkFormatError(str(exc), location) from None
            except (TypeError, ValueError) as exc:
                raise NetworkFormatError(f"malformed numbers ({exc})", location) from None

        try:
            box = np.array(data["input_bounds"], dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise NetworkFormatError(f"malformed numbers ({exc})", "input_bounds") from None
        return cls(tuple(layers), box)


def forward(net: Network, x) -> np.ndarray:
    return net.forward(x)


def forward_trace(net: Network, x) -> Tuple[List[np.ndarray], np.ndarray]:
    return net.forward_trace(x)


def apply_scaling(net: Network, scaling: ScalingFactors) -> Network:
    return net.apply_scaling(scaling)


def save(net: Network, path: Union[str, Path]) -> None:
    """Write the network JSON file (floats keep their shortest round-trip repr, at most 17 digits)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(net.to_dict(), indent=1))


def load(path: Union[str, Path]) -> Network:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise NetworkFormatError(f"invalid JSON ({exc})", str(path)) from None
    return Network.from_dict(data)


def random_network(
    hidden_sizes: Sequence[int],
    n_inputs: int = 2,
    n_outputs: int = 1,
    activation: Optional[ActivationKind] = None,
    input_bounds=None,
    seed: int = 0,
    scale: float = 1.0,
) -> Network:
    """
    Network with uniform He-style random weights and small random biases.

    Used for experiments on untrained networks and as a test fixture.
    """
    rng = np.random.default_rng(seed)
    activation = activation or ActivationKind.relu()
    box = np.array(input_bounds if input_bounds is not None else [[-1.0, 1.0]] * n_inputs, dtype=np.float64)
    layers = []
    width = n_inputs
    sizes = list(hidden_sizes) + [n_outputs]
    for k, size in enumerate(sizes):
        limit = scale * np.sqrt(6.0 / width)
        weights = rng.uniform(-limit, limit, size=(size, width))
        bias = rng.uniform(-0.5, 0.5, size=size) * scale
        kind = activation if k < len(sizes) - 1 else ActivationKind.identity()
        layers.append(Layer(weights, bias, kind))
        width = size
    return Network(tuple(layers), box)
