"""
Big-M MILP encodings of ReLU and clipped-ReLU networks.

Each hidden neuron gets a post-activation variable; its pre-activation is kept
as a linear expression over the previous layer. Stable neurons are encoded
without binaries, unstable ones with the big-M rows built from their bounds.
Binaries are relaxed to [0, 1] in the LP model; integrality is enforced by
branch-and-bound.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .. import EncodingError, UnsupportedActivationError
from ..models.network import Activation, Network
from .bounds_engine import BoundsSet
from .lp_solver import LpBuilder, LpModel, Relation, Sense

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class MilpModel:
    """
    LP relaxation of a network encoding plus the variable maps needed to read it.

    Attributes:
        lp: Relaxed model (binaries bounded to [0, 1])
        binaries: Indices of binary variables, in layer / neuron order
        input_vars: Variable index per network input
        hidden_vars: Per hidden layer, variable index per neuron (post-activation)
        output_vars: Variable index per network output (empty for prefix encodings)
        neuron_binaries: (layer, neuron) -> binary indices; layer is 1-based
        bounds: Big-M source
    """

    lp: LpModel
    binaries: Tuple[int, ...]
    input_vars: np.ndarray
    hidden_vars: Tuple[np.ndarray, ...]
    output_vars: np.ndarray
    neuron_binaries: Dict[Tuple[int, int], Tuple[int, ...]]
    bounds: BoundsSet
    net: Network = field(repr=False)

    @property
    def n_binaries(self) -> int:
        return len(self.binaries)

    def layer_vars(self, k: int) -> np.ndarray:
        """Variables holding the output of layer k (0 = inputs)."""
        return self.input_vars if k == 0 else self.hidden_vars[k - 1]

    def pre_activation(self, k: int, i: int) -> Tuple[np.ndarray, float]:
        """Objective vector and constant of W^(k)_i x^(k-1) + b^(k)_i over the model variables."""
        layer = self.net.layers[k - 1]
        c = np.zeros(self.lp.n_vars)
        c[self.layer_vars(k - 1)] = layer.weights[i]
        return c, float(layer.bias[i])

    def output_objective(self, coefficients: Sequence[float]) -> np.ndarray:
        """Objective vector for a linear combination of the network outputs."""
        coefficients = np.asarray(coefficients, dtype=np.float64)
        if self.output_vars.size == 0:
            raise EncodingError("prefix encodings have no output variables")
        if coefficients.size != self.output_vars.size:
            raise EncodingError(f"expected {self.output_vars.size} output coefficients, got {coefficients.size}")
        c = np.zeros(self.lp.n_vars)
        c[self.output_vars] = coefficients
        return c

    def with_objective(self, c: np.ndarray, sense: Sense = Sense.MIN) -> "MilpModel":
        return MilpModel(self.lp.with_objective(c, sense), self.binaries, self.input_vars, self.hidden_vars,
                         self.output_vars, self.neuron_binaries, self.bounds, self.net)

    def assignment(self, x) -> np.ndarray:
        """
        Exact variable assignment for input ``x``: post-activations from the forward
        trace and binaries set to the active arm.
        """
        x = np.asarray(x, dtype=np.float64)
        pre, out = self.net.forward_trace(x)
        values = np.zeros(self.lp.n_vars)
        values[self.input_vars] = x
        for k, hidden in enumerate(self.hidden_vars, start=1):
            activation = self.net.layers[k - 1].activation
            values[hidden] = activation.apply(pre[k - 1])
            for i in range(hidden.size):
                binaries = self.neuron_binaries.get((k, i), ())
                if not binaries:
                    continue
                t = pre[k - 1][i]
                if activation.is_clipped and len(binaries) == 2:
                    values[binaries[0]] = float(t > 0)
                    values[binaries[1]] = float(t >= activation.clip)
                elif activation.is_clipped:
                    values[binaries[0]] = float(t >= activation.clip)
                else:
                    values[binaries[0]] = float(t > 0)
        if self.output_vars.size:
            values[self.output_vars] = out
        return values

    def to_lp_text(self) -> str:
        return self.lp.to_lp_text(self.binaries)


def _check_bounds(lower: float, upper: float, k: int, i: int) -> None:
    if not (np.isfinite(lower) and np.isfinite(upper)):
        raise EncodingError(f"layer {k} neuron {i}: big-M bounds must be finite")
    if lower > upper:
        raise EncodingError(f"layer {k} neuron {i}: invalid bounds L={lower} > U={upper}")


def _encode_relu(builder: LpBuilder, expr: Dict[int, float], bias: float, lower: float, upper: float,
                 k: int, i: int) -> Tuple[int, Tuple[int, ...]]:
    if upper < 0:
        return builder.add_variable(f"h{k}_{i}", 0.0, 0.0), ()
    if lower > 0:
        post = builder.add_variable(f"h{k}_{i}", lower, upper)
        builder.add_row({post: 1.0, **{j: -w for j, w in expr.items()}}, Relation.EQ, bias)
        return post, ()

    post = builder.add_variable(f"h{k}_{i}", 0.0, max(upper, 0.0))
    z = builder.add_variable(f"z{k}_{i}", 0.0, 1.0)
    neg_expr = {j: -w for j, w in expr.items()}
    # x >= e
    builder.add_row({post: 1.0, **neg_expr}, Relation.GE, bias)
    # x <= e - L (1 - z)
    builder.add_row({post: 1.0, **neg_expr, z: -lower}, Relation.LE, bias - lower)
    # x <= U z
    builder.add_row({post: 1.0, z: -upper}, Relation.LE, 0.0)
    return post, (z,)


def _encode_clipped(builder: LpBuilder, expr: Dict[int, float], bias: float, lower: float, upper: float,
                    clip: float, k: int, i: int) -> Tuple[int, Tuple[int, ...]]:
    neg_expr = {j: -w for j, w in expr.items()}
    if upper < 0:
        return builder.add_variable(f"h{k}_{i}", 0.0, 0.0), ()
    if lower >= clip:
        return builder.add_variable(f"h{k}_{i}", clip, clip), ()
    if lower > 0 and upper <= clip:
        post = builder.add_variable(f"h{k}_{i}", lower, upper)
        builder.add_row({post: 1.0, **neg_expr}, Relation.EQ, bias)
        return post, ()
    if lower > 0:
        # Linear or saturated: z2 = 1 selects x = M
        post = builder.add_variable(f"h{k}_{i}", lower, clip)
        z2 = builder.add_variable(f"z2_{k}_{i}", 0.0, 1.0)
        builder.add_row({post: 1.0, **neg_expr}, Relation.LE, bias)
        builder.add_row({post: 1.0, **neg_expr, z2: upper - clip}, Relation.GE, bias)
        builder.add_row({post: 1.0, z2: -(clip - lower)}, Relation.GE, lower)
        return post, (z2,)

    post = builder.add_variable(f"h{k}_{i}", 0.0, min(clip, max(upper, 0.0)))
    z1 = builder.add_variable(f"z1_{k}_{i}", 0.0, 1.0)
    z2 = builder.add_variable(f"z2_{k}_{i}", 0.0, 1.0)
    # x <= M z1, x <= U z1
    builder.add_row({post: 1.0, z1: -clip}, Relation.LE, 0.0)
    builder.add_row({post: 1.0, z1: -upper}, Relation.LE, 0.0)
    # x <= e - L (1 - z1)
    builder.add_row({post: 1.0, **neg_expr, z1: -lower}, Relation.LE, bias - lower)
    # x >= M z2
    builder.add_row({post: 1.0, z2: -clip}, Relation.GE, 0.0)
    # x >= e - (U - M) z2
    builder.add_row({post: 1.0, **neg_expr, z2: upper - clip}, Relation.GE, bias)
    # z1 >= z2
    builder.add_row({z1: 1.0, z2: -1.0}, Relation.GE, 0.0)
    return post, (z1, z2)


def encode(
    net: Network,
    bounds: BoundsSet,
    input_box: Optional[np.ndarray] = None,
    hidden_layers: Optional[int] = None,
) -> MilpModel:
    """
    Encode a network as a big-M MILP.

    Args:
        net: ReLU or clipped-ReLU network
        bounds: Pre-activation bounds valid on ``input_box``
        input_box: Box for the input variables (defaults to the bounds' box); lo == hi allowed
        hidden_layers: Encode only the first ``hidden_layers`` hidden layers and no
            outputs (prefix encoding used by bound tightening)

    Returns:
        MilpModel with a zero objective
    """
    if bounds.depth != net.depth:
        raise EncodingError(f"bounds cover {bounds.depth} layers, network has {net.depth}")
    for k, layer in enumerate(net.layers, start=1):
        if bounds.lower[k - 1].size != layer.n_out:
            raise EncodingError(f"layer {k}: bounds for {bounds.lower[k - 1].size} neurons, layer has {layer.n_out}")
    box = bounds.input_box if input_box is None else np.asarray(input_box, dtype=np.float64)
    if box.shape != net.input_bounds.shape or np.any(box[:, 0] > box[:, 1]):
        raise EncodingError("input box must be n_x x 2 with lo <= hi")
    n_hidden_layers = net.depth - 1
    prefix = hidden_layers is not None and hidden_layers < n_hidden_layers
    n_encoded = n_hidden_layers if hidden_layers is None else min(hidden_layers, n_hidden_layers)

    builder = LpBuilder()
    input_vars = np.array([builder.add_variable(f"x0_{j}", lo, hi) for j, (lo, hi) in enumerate(box)], dtype=int)
    previous = input_vars
    hidden_vars: List[np.ndarray] = []
    neuron_binaries: Dict[Tuple[int, int], Tuple[int, ...]] = {}
    binaries: List[int] = []

    for k in range(1, n_encoded + 1):
        layer = net.layers[k - 1]
        activation = layer.activation
        if activation.kind == Activation.IDENTITY:
            raise UnsupportedActivationError(f"hidden layer {k} uses the identity activation")
        lower, upper = bounds.layer(k)
        current = []
        for i in range(layer.n_out):
            _check_bounds(lower[i], upper[i], k, i)
            expr = dict(zip(previous.tolist(), layer.weights[i].tolist()))
            if activation.is_clipped:
                post, zs = _encode_clipped(builder, expr, layer.bias[i], lower[i], upper[i], activation.clip, k, i)
            else:
                post, zs = _encode_relu(builder, expr, layer.bias[i], lower[i], upper[i], k, i)
            current.append(post)
            if zs:
                neuron_binaries[(k, i)] = zs
                binaries.extend(zs)
        previous = np.array(current, dtype=int)
        hidden_vars.append(previous)

    output_vars = np.zeros(0, dtype=int)
    if not prefix:
        out_layer = net.layers[-1]
        outputs = []
        for i in range(out_layer.n_out):
            y = builder.add_variable(f"y_{i}")
            builder.add_row({y: 1.0, **{j: -w for j, w in zip(previous.tolist(), out_layer.weights[i].tolist())}},
                            Relation.EQ, out_layer.bias[i])
            outputs.append(y)
        output_vars = np.array(outputs, dtype=int)

    lp = builder.build()
    logger.debug(f"Encoded {n_encoded} hidden layers: {lp.n_vars} variables, {lp.n_rows} rows, "
                 f"{len(binaries)} binaries")
    return MilpModel(lp, tuple(binaries), input_vars, tuple(hidden_vars), output_vars, neuron_binaries, bounds, net)
