"""
Pre-activation bounds.

Interval-arithmetic propagation of the input box through a network, stable
neuron classification, the scaled-bounds relation check and sampling-based
soundness checks.
"""
import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from .. import BoundsRelationError
from ..models.network import Network, ScalingFactors

logger = logging.getLogger(__name__)

RELATION_TOLERANCE = 1e-8
SOUNDNESS_TOLERANCE = 1e-7


class Provenance(str, Enum):
    IA = "IA"
    OBBT = "OBBT"
    SCALED_IA = "Scaled+IA"
    SCALED_OBBT = "Scaled+OBBT"

    def tightened(self) -> "Provenance":
        return Provenance.SCALED_OBBT if self in (Provenance.SCALED_IA, Provenance.SCALED_OBBT) else Provenance.OBBT

    def scaled(self) -> "Provenance":
        return Provenance.SCALED_OBBT if self in (Provenance.OBBT, Provenance.SCALED_OBBT) else Provenance.SCALED_IA


class NeuronStatus(str, Enum):
    STABLY_ACTIVE = "active"
    STABLY_INACTIVE = "inactive"
    UNSTABLE = "unstable"


@dataclass(frozen=True, eq=False)
class BoundsSet:
    """
    Pre-activation bounds [L, U] for every neuron of every layer.

    ``lower[k]`` / ``upper[k]`` belong to layer k+1 (the last entry is the
    output layer). ``input_box`` is the box the bounds are valid on.
    """

    lower: Tuple[np.ndarray, ...]
    upper: Tuple[np.ndarray, ...]
    provenance: Provenance
    input_box: np.ndarray

    def __post_init__(self):
        lower = tuple(np.array(v, dtype=np.float64).reshape(-1) for v in self.lower)
        upper = tuple(np.array(v, dtype=np.float64).reshape(-1) for v in self.upper)
        if len(lower) != len(upper):
            raise ValueError("lower and upper bounds cover different numbers of layers")
        for k, (lo, hi) in enumerate(zip(lower, upper), start=1):
            if lo.shape != hi.shape:
                raise ValueError(f"layer {k}: lower and upper bound lengths differ")
            if np.any(lo > hi):
                i = int(np.argmax(lo - hi))
                raise ValueError(f"layer {k} neuron {i}: lower bound {lo[i]} exceeds upper bound {hi[i]}")
        for v in lower + upper:
            v.setflags(write=False)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "provenance", Provenance(self.provenance))
        object.__setattr__(self, "input_box", np.array(self.input_box, dtype=np.float64))

    @property
    def depth(self) -> int:
        return len(self.lower)

    @property
    def hidden_lower(self) -> Tuple[np.ndarray, ...]:
        return self.lower[:-1]

    @property
    def hidden_upper(self) -> Tuple[np.ndarray, ...]:
        return self.upper[:-1]

    @property
    def n_hidden(self) -> int:
        return int(sum(v.size for v in self.hidden_lower))

    def layer(self, k: int) -> Tuple[np.ndarray, np.ndarray]:
        """Bounds of layer k, 1-based."""
        return self.lower[k - 1], self.upper[k - 1]

    def replace(self, lower=None, upper=None, provenance: Provenance = None) -> "BoundsSet":
        return BoundsSet(
            tuple(lower if lower is not None else self.lower),
            tuple(upper if upper is not None else self.upper),
            provenance or self.provenance,
            self.input_box,
        )

    def widths(self) -> List[np.ndarray]:
        return [hi - lo for lo, hi in zip(self.lower, self.upper)]

    def mean_hidden_width(self) -> float:
        """Mean of U - L over all hidden neurons (0.0 without hidden neurons)."""
        if self.n_hidden == 0:
            return 0.0
        return float(np.concatenate(self.widths()[:-1]).mean())

    def width_profile(self) -> List[float]:
        """Mean width per layer, output layer included."""
        return [float(w.mean()) for w in self.widths()]

    def to_dict(self) -> Dict:
        summary = classify(self)
        return {
            "provenance": self.provenance.value,
            "input_box": self.input_box.tolist(),
            "L": [v.tolist() for v in self.lower],
            "U": [v.tolist() for v in self.upper],
            "stable_percentage": summary.stable_percentage,
            "stable_count": summary.stable_count,
            "hidden_count": summary.total,
            "mean_hidden_width": self.mean_hidden_width(),
            "width_profile": self.width_profile(),
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "BoundsSet":
        return cls(
            tuple(np.array(v) for v in data["L"]),
            tuple(np.array(v) for v in data["U"]),
            Provenance(data["provenance"]),
            np.array(data["input_box"]),
        )

    def save(self, path: Union[str, Path]) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path: Union[str, Path]) -> "BoundsSet":
        return cls.from_dict(json.loads(Path(path).read_text()))


def interval_affine(
    weights: np.ndarray, bias: np.ndarray, lower: np.ndarray, upper: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """Exact range of W x + b over the box [lower, upper]."""
    w_pos = np.maximum(weights, 0.0)
    w_neg = np.minimum(weights, 0.0)
    return w_pos @ lower + w_neg @ upper + bias, w_pos @ upper + w_neg @ lower + bias


def ia_bounds(
    net: Network, input_box: Optional[np.ndarray] = None, provenance: Provenance = Provenance.IA
) -> BoundsSet:
    """
    Interval-arithmetic pre-activation bounds.

    Args:
        net: Network
        input_box: Optional box (n_x x 2) replacing the network's input bounds;
            lo == hi is allowed
        provenance: Tag stored on the result

    Returns:
        BoundsSet covering every layer
    """
    box = net.input_bounds if input_box is None else np.asarray(input_box, dtype=np.float64)
    if box.shape != net.input_bounds.shape or np.any(box[:, 0] > box[:, 1]):
        raise ValueError(f"input box must be {net.input_bounds.shape} with lo <= hi")
    lo, hi = box[:, 0], box[:, 1]
    lowers, uppers = [], []
    for layer in net.layers:
        pre_lo, pre_hi = interval_affine(layer.weights, layer.bias, lo, hi)
        lowers.append(pre_lo)
        uppers.append(pre_hi)
        lo, hi = layer.activation.apply_interval(pre_lo, pre_hi)
    return BoundsSet(tuple(lowers), tuple(uppers), provenance, box)


def propagate_output_bounds(net: Network, bounds: BoundsSet) -> Tuple[np.ndarray, np.ndarray]:
    """IA bounds of the output layer from the stored bounds of the last hidden layer."""
    if net.depth == 1:
        box = bounds.input_box
        return interval_affine(net.layers[0].weights, net.layers[0].bias, box[:, 0], box[:, 1])
    activation = net.layers[-2].activation
    lo, hi = activation.apply_interval(bounds.lower[-2], bounds.upper[-2])
    return interval_affine(net.layers[-1].weights, net.layers[-1].bias, lo, hi)


@dataclass
class Classification:
    statuses: List[List[NeuronStatus]]
    stable_count: int
    total: int

    @property
    def stable_percentage(self) -> float:
        """Stable fraction in [0, 1]; a network without hidden neurons counts as fully stable."""
        return 1.0 if self.total == 0 else self.stable_count / self.total

    @property
    def unstable_count(self) -> int:
        return self.total - self.stable_count


def neuron_status(lower: float, upper: float) -> NeuronStatus:
    if lower > 0:
        return NeuronStatus.STABLY_ACTIVE
    if upper < 0:
        return NeuronStatus.STABLY_INACTIVE
    return NeuronStatus.UNSTABLE


def classify(bounds: BoundsSet) -> Classification:
    """Per hidden neuron status by strict sign tests on its bounds."""
    statuses = []
    stable = 0
    for lo, hi in zip(bounds.hidden_lower, bounds.hidden_upper):
        layer = [neuron_status(a, b) for a, b in zip(lo, hi)]
        stable += sum(s != NeuronStatus.UNSTABLE for s in layer)
        statuses.append(layer)
    return Classification(statuses, stable, bounds.n_hidden)


@dataclass
class RelationRecord:
    """Deviation of scaled IA bounds from the rescaled original bounds."""

    max_hidden_deviation: float
    max_output_deviation: float
    worst: Dict = field(default_factory=dict)

    @property
    def max_deviation(self) -> float:
        return max(self.max_hidden_deviation, self.max_output_deviation)


def _relative_deviation(actual: np.ndarray, expected: np.ndarray) -> np.ndarray:
    return np.abs(actual - expected) / np.maximum(1.0, np.abs(expected))


def scaled_bounds_relation(
    net: Network, scaling: ScalingFactors, tolerance: float = RELATION_TOLERANCE
) -> RelationRecord:
    """
    Check that IA bounds commute with equivalent scaling.

    Hidden bounds of the scaled network must equal c * original bounds and the
    output bounds must be unchanged, both to ``tolerance`` relative to max(1, |b|).

    Raises:
        BoundsRelationError: when a neuron deviates by more than ``tolerance``
    """
    original = ia_bounds(net)
    scaled = ia_bounds(net.apply_scaling(scaling), provenance=Provenance.SCALED_IA)

    worst = {"deviation": 0.0}
    hidden_max = 0.0
    for k in range(net.depth - 1):
        c = scaling[k]
        for side, actual, expected in (
            ("L", scaled.lower[k], c * original.lower[k]),
            ("U", scaled.upper[k], c * original.upper[k]),
        ):
            dev = _relative_deviation(actual, expected)
            i = int(np.argmax(dev))
            if dev[i] > hidden_max:
                hidden_max = float(dev[i])
            if dev[i] > worst["deviation"]:
                worst = {"layer": k + 1, "neuron": i, "side": side, "deviation": float(dev[i])}

    output_max = 0.0
    for side, actual, expected in (
        ("L", scaled.lower[-1], original.lower[-1]),
        ("U", scaled.upper[-1], original.upper[-1]),
    ):
        dev = _relative_deviation(actual, expected)
        i = int(np.argmax(dev))
        output_max = max(output_max, float(dev[i]))
        if dev[i] > worst["deviation"]:
            worst = {"layer": net.depth, "neuron": i, "side": side, "deviation": float(dev[i])}

    record = RelationRecord(hidden_max, output_max, worst)
    if record.max_deviation > tolerance:
        raise BoundsRelationError(f"scaled IA bounds deviate by {record.max_deviation:.3e}", worst)
    return record


def check_soundness(
    net: Network, bounds: BoundsSet, n_samples: int = 100_000, seed: int = 0,
    tolerance: float = SOUNDNESS_TOLERANCE,
) -> Dict:
    """
    Sample the bounds' input box and count pre-activations outside [L - tol, U + tol].

    Returns:
        Dictionary with the violation count and the largest excess
    """
    rng = np.random.default_rng(seed)
    box = bounds.input_box
    x = rng.uniform(box[:, 0], box[:, 1], size=(n_samples, box.shape[0]))
    pre, _ = net.forward_trace(x)
    violations = 0
    max_excess = 0.0
    for k, values in enumerate(pre):
        excess = np.maximum(bounds.lower[k] - values, values - bounds.upper[k])
        violations += int(np.count_nonzero(excess > tolerance))
        max_excess = max(max_excess, float(excess.max()))
    if violations:
        logger.warning(f"{bounds.provenance.value} bounds violated by {violations} sampled pre-activations")
    return {"violations": violations, "max_excess": max_excess, "n_samples": n_samples}
