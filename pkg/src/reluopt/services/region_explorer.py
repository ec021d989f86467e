"""
Linear regions of 2-D ReLU networks.

A region is the set of inputs sharing one activation pattern. Its polygon is
the input box clipped by one halfplane per hidden neuron (Sutherland-Hodgman
against single halfplanes); edges contributed by neurons are facets, and
enumeration walks across facets breadth-first starting at the box center.
"""
import json
import logging
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .. import DegenerateRegionError, IncompleteAtlasError, RegionLimitError, UnsupportedActivationError
from ..config import MAX_HIDDEN_NEURONS, MAX_REGIONS
from ..models.network import Network

logger = logging.getLogger(__name__)

AREA_EPS = 1e-12
SEED_DISTANCE = 1e-6
JITTER = 1e-9
MAX_JITTER_RETRIES = 10
BISECTION_STEPS = 10
# Gradient norms below this (relative to the layer's weight scale) make a neuron constant on the region
CONSTANT_TOL = 1e-14


@dataclass(frozen=True)
class ActivationPattern:
    """On/off state of every hidden neuron, packed into bytes."""

    packed: bytes
    length: int

    @classmethod
    def from_array(cls, bits) -> "ActivationPattern":
        bits = np.asarray(bits, dtype=bool).reshape(-1)
        return cls(np.packbits(bits).tobytes(), int(bits.size))

    @classmethod
    def from_hex(cls, value: str, length: int) -> "ActivationPattern":
        return cls(bytes.fromhex(value), length)

    def as_array(self) -> np.ndarray:
        return np.unpackbits(np.frombuffer(self.packed, dtype=np.uint8), count=self.length).astype(bool)

    def hex(self) -> str:
        return self.packed.hex()

    def flip(self, index: int) -> "ActivationPattern":
        bits = self.as_array()
        bits[index] = ~bits[index]
        return ActivationPattern.from_array(bits)

    def hamming(self, other: "ActivationPattern") -> int:
        return int(np.count_nonzero(self.as_array() != other.as_array()))

    def __len__(self) -> int:
        return self.length

    def __str__(self) -> str:
        return self.hex()


@dataclass
class Linearization:
    """Affine functionals of every hidden neuron and of the outputs under one pattern."""

    gradients: List[np.ndarray]
    offsets: List[np.ndarray]
    output_gradient: np.ndarray
    output_offset: np.ndarray

    def neuron_functionals(self) -> Tuple[np.ndarray, np.ndarray]:
        """All hidden neurons stacked: (n_hidden x n_x gradients, n_hidden offsets)."""
        if not self.gradients:
            return np.zeros((0, self.output_gradient.shape[1])), np.zeros(0)
        return np.vstack(self.gradients), np.concatenate(self.offsets)


def _require_relu(net: Network) -> None:
    if not net.is_relu:
        raise UnsupportedActivationError("region analysis supports plain ReLU hidden layers only")


def linearize_at(net: Network, pattern: Union[ActivationPattern, Sequence[bool]]) -> Linearization:
    """
    Propagate Jacobians and offsets through the network with the activations
    fixed to ``pattern``.

    Returns:
        Per-neuron pre-activation functionals and the output affine map in input space
    """
    _require_relu(net)
    bits = pattern.as_array() if isinstance(pattern, ActivationPattern) else np.asarray(pattern, dtype=bool)
    if bits.size != net.n_hidden:
        raise ValueError(f"pattern has {bits.size} bits, network has {net.n_hidden} hidden neurons")

    jacobian = np.eye(net.n_inputs)
    offset = np.zeros(net.n_inputs)
    gradients, offsets = [], []
    start = 0
    for layer in net.hidden_layers:
        pre_grad = layer.weights @ jacobian
        pre_off = layer.weights @ offset + layer.bias
        gradients.append(pre_grad)
        offsets.append(pre_off)
        mask = bits[start:start + layer.n_out].astype(np.float64)
        jacobian = pre_grad * mask[:, None]
        offset = pre_off * mask
        start += layer.n_out
    last = net.layers[-1]
    return Linearization(gradients, offsets, last.weights @ jacobian, last.weights @ offset + last.bias)


@dataclass
class Facet:
    """Polygon edge contributed by a hidden neuron's switching line."""

    neuron: int
    layer: int
    index: int
    start: np.ndarray
    end: np.ndarray
    normal: np.ndarray
    neighbor: Optional[ActivationPattern] = None

    @property
    def midpoint(self) -> np.ndarray:
        return 0.5 * (self.start + self.end)

    def to_dict(self) -> Dict:
        return {
            "neuron": self.neuron,
            "layer": self.layer,
            "index": self.index,
            "start": self.start.tolist(),
            "end": self.end.tolist(),
            "neighbor": None if self.neighbor is None else self.neighbor.hex(),
        }


@dataclass
class LinearRegion:
    """Convex polygon (counterclockwise) on which the network equals A x + beta."""

    pattern: ActivationPattern
    vertices: np.ndarray
    output_gradient: np.ndarray
    output_offset: np.ndarray
    facets: List[Facet] = field(default_factory=list)

    @property
    def area(self) -> float:
        return polygon_area(self.vertices)

    @property
    def centroid(self) -> np.ndarray:
        return self.vertices.mean(axis=0)

    def evaluate(self, x) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) @ self.output_gradient.T + self.output_offset

    def contains(self, point, tol: float = 1e-12) -> bool:
        """Point-in-convex-polygon test with a small outward tolerance."""
        point = np.asarray(point, dtype=np.float64)
        nxt = np.roll(self.vertices, -1, axis=0)
        edges = nxt - self.vertices
        rel = point - self.vertices
        cross = edges[:, 0] * rel[:, 1] - edges[:, 1] * rel[:, 0]
        return bool(np.all(cross >= -tol))

    def sample_interior(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Random convex combinations of the vertices, all strictly inside."""
        weights = rng.dirichlet(np.ones(len(self.vertices)), size=n)
        return weights @ self.vertices

    def to_dict(self) -> Dict:
        return {
            "pattern": self.pattern.hex(),
            "vertices": self.vertices.tolist(),
            "area": self.area,
            "gradient": self.output_gradient.tolist(),
            "offset": self.output_offset.tolist(),
            "facets": [f.to_dict() for f in self.facets],
        }


def polygon_area(vertices: np.ndarray) -> float:
    """Signed shoelace area (positive for counterclockwise order)."""
    if len(vertices) < 3:
        return 0.0
    x, y = vertices[:, 0], vertices[:, 1]
    return float(0.5 * (np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y)))


def box_polygon(box: np.ndarray) -> List[Tuple[np.ndarray, Optional[int]]]:
    """Counterclockwise box corners, each with the label of its outgoing edge (None = domain)."""
    (x_lo, x_hi), (y_lo, y_hi) = box
    corners = [(x_lo, y_lo), (x_hi, y_lo), (x_hi, y_hi), (x_lo, y_hi)]
    return [(np.array(c, dtype=np.float64), None) for c in corners]


def clip_halfplane(
    polygon: List[Tuple[np.ndarray, Optional[int]]], normal: np.ndarray, offset: float, label: int
) -> List[Tuple[np.ndarray, Optional[int]]]:
    """
    Keep the part of a convex polygon where normal . x + offset >= 0.

    Vertices carry the label of their outgoing edge; edges created along the
    clipping line get ``label``.
    """
    if not polygon:
        return []
    result = []
    count = len(polygon)
    values = [float(normal @ p + offset) for p, _ in polygon]
    for i in range(count):
        p, edge_label = polygon[i]
        q = polygon[(i + 1) % count][0]
        dp, dq = values[i], values[(i + 1) % count]
        p_inside, q_inside = dp >= 0, dq >= 0
        if p_inside:
            if q_inside:
                result.append((p, edge_label))
            else:
                result.append((p, edge_label))
                result.append((p + (dp / (dp - dq)) * (q - p), label))
        elif q_inside:
            result.append((p + (dp / (dp - dq)) * (q - p), edge_label))
    return result


def _drop_duplicates(polygon, tol: float):
    """Remove vertices whose outgoing edge is shorter than ``tol``."""
    changed = True
    while changed and len(polygon) > 2:
        changed = False
        for i in range(len(polygon)):
            if np.linalg.norm(polygon[(i + 1) % len(polygon)][0] - polygon[i][0]) <= tol:
                del polygon[i]
                changed = True
                break
    return polygon


class RegionExplorer:
    """
    Region geometry for one network over a 2-D box.

    Args:
        net: ReLU network with two inputs
        box: Input box (defaults to the network's input bounds)
        max_hidden: Hidden-neuron cap
    """

    def __init__(self, net: Network, box: Optional[np.ndarray] = None, max_hidden: int = MAX_HIDDEN_NEURONS):
        _require_relu(net)
        if net.n_inputs != 2:
            raise ValueError(f"region analysis needs 2-D inputs, network has {net.n_inputs}")
        if net.n_hidden > max_hidden:
            raise RegionLimitError(f"{net.n_hidden} hidden neurons exceed the cap of {max_hidden}")
        self.net = net
        self.box = net.input_bounds if box is None else np.asarray(box, dtype=np.float64)
        self.box_area = float(np.prod(self.box[:, 1] - self.box[:, 0]))
        self.diameter = float(np.linalg.norm(self.box[:, 1] - self.box[:, 0]))
        self.area_eps = AREA_EPS * self.box_area
        self.neuron_layer = []
        for k, layer in enumerate(net.hidden_layers, start=1):
            self.neuron_layer.extend((k, i) for i in range(layer.n_out))
        self.weight_scale = [max(1.0, float(np.abs(layer.weights).max())) for layer in net.hidden_layers]
        self._rng = np.random.default_rng(0)

    def _inside_box(self, point: np.ndarray) -> bool:
        return bool(np.all(point > self.box[:, 0]) and np.all(point < self.box[:, 1]))

    def _pattern_at(self, point: np.ndarray) -> Tuple[ActivationPattern, Linearization, np.ndarray]:
        pre, _ = self.net.forward_trace(point)
        bits = np.concatenate([p > 0 for p in pre[:-1]]) if self.net.depth > 1 else np.zeros(0, dtype=bool)
        lin = linearize_at(self.net, bits)
        grads, offsets = lin.neuron_functionals()
        constant = self._constant_mask(grads)
        # Neurons constant on the region take the sign of their offset
        if np.any(constant):
            bits = bits.copy()
            bits[constant] = offsets[constant] > 0
            lin = linearize_at(self.net, bits)
        return ActivationPattern.from_array(bits), lin, constant

    def _constant_mask(self, grads: np.ndarray) -> np.ndarray:
        if grads.size == 0:
            return np.zeros(0, dtype=bool)
        scale = np.array([self.weight_scale[k - 1] for k, _ in self.neuron_layer])
        return np.abs(grads).max(axis=1) <= CONSTANT_TOL * scale

    def _on_switching_line(self, point: np.ndarray) -> bool:
        """True if the point lies within 1e-12 * diameter of a non-constant neuron's line."""
        _, lin, constant = self._pattern_at(point)
        grads, offsets = lin.neuron_functionals()
        if grads.shape[0] == 0:
            return False
        live = ~constant
        distance = np.abs(grads[live] @ point + offsets[live]) / np.linalg.norm(grads[live], axis=1)
        return bool(np.any(distance <= 1e-12 * self.diameter))

    def region_of(self, seed_point) -> LinearRegion:
        """
        Linear region containing ``seed_point``.

        Raises:
            DegenerateRegionError: if the region has an empty interior
        """
        point = np.asarray(seed_point, dtype=np.float64)
        if not self._inside_box(point):
            raise ValueError(f"seed {point.tolist()} is not strictly inside the box")
        for _ in range(MAX_JITTER_RETRIES):
            if not self._on_switching_line(point):
                break
            jittered = point + self._rng.normal(scale=JITTER * self.diameter, size=2)
            if self._inside_box(jittered):
                point = jittered
        else:
            raise DegenerateRegionError(f"seed {point.tolist()} stays on a switching line after jitter")

        pattern, lin, constant = self._pattern_at(point)
        grads, offsets = lin.neuron_functionals()
        bits = pattern.as_array()
        polygon = box_polygon(self.box)
        for n in range(grads.shape[0]):
            if constant[n]:
                continue
            sign = 1.0 if bits[n] else -1.0
            polygon = clip_halfplane(polygon, sign * grads[n], sign * offsets[n], n)
            if not polygon:
                break
        polygon = _drop_duplicates(polygon, 1e-12 * self.diameter)

        vertices = np.array([p for p, _ in polygon]) if polygon else np.zeros((0, 2))
        if len(vertices) < 3 or polygon_area(vertices) <= self.area_eps:
            raise DegenerateRegionError(f"region of pattern {pattern.hex()} has an empty interior")

        facets = []
        for i, (start, label) in enumerate(polygon):
            if label is None:
                continue
            end = polygon[(i + 1) % len(polygon)][0]
            edge = end - start
            # Counterclockwise order puts the interior on the left, so the outward normal points right
            normal = np.array([edge[1], -edge[0]])
            normal /= np.linalg.norm(normal)
            layer, index = self.neuron_layer[label]
            facets.append(Facet(label, layer, index, start, end, normal))
        return LinearRegion(pattern, vertices, lin.output_gradient, lin.output_offset, facets)

    def _neighbor(self, region: LinearRegion, facet: Facet, warnings: List[str]) -> Optional[LinearRegion]:
        expected = region.pattern.flip(facet.neuron)
        distance = SEED_DISTANCE * self.diameter
        landed = None
        for _ in range(BISECTION_STEPS + 1):
            seed = facet.midpoint + distance * facet.normal
            if self._inside_box(seed):
                try:
                    landed = self.region_of(seed)
                except DegenerateRegionError as e:
                    logger.debug(f"Neighbor seed across neuron {facet.neuron}: {e}")
                    landed = None
                if landed is not None and landed.pattern == expected:
                    return landed
            distance /= 2.0
        if landed is not None:
            message = (f"simultaneous switch across neuron {facet.neuron} of region {region.pattern.hex()}: "
                       f"landed {landed.pattern.hamming(region.pattern)} bits away")
            warnings.append(message)
            logger.warning(message)
        return landed

    def enumerate(self, max_regions: int = MAX_REGIONS) -> "RegionAtlas":
        """
        Breadth-first enumeration of all regions intersecting the box.

        Args:
            max_regions: Region budget; the atlas is marked incomplete when hit

        Returns:
            RegionAtlas sorted by pattern
        """
        center = self.box.mean(axis=1)
        first = self.region_of(center)
        visited: Dict[ActivationPattern, LinearRegion] = {first.pattern: first}
        queue = deque([first])
        warnings: List[str] = []
        incomplete = False

        while queue:
            region = queue.popleft()
            for facet in region.facets:
                expected = region.pattern.flip(facet.neuron)
                if expected in visited:
                    facet.neighbor = expected
                    continue
                neighbor = self._neighbor(region, facet, warnings)
                if neighbor is None:
                    warnings.append(f"no neighbor found across neuron {facet.neuron} of region {region.pattern.hex()}")
                    continue
                facet.neighbor = neighbor.pattern
                if neighbor.pattern in visited:
                    continue
                if len(visited) >= max_regions:
                    incomplete = True
                    break
                visited[neighbor.pattern] = neighbor
                queue.append(neighbor)
            if incomplete:
                break

        regions = sorted(visited.values(), key=lambda r: r.pattern.hex())
        atlas = RegionAtlas(regions, self.box, incomplete, warnings)
        error = atlas.partition_error()
        if not incomplete and error > 1e-6:
            message = f"region areas miss the box area by {error:.2e} (relative)"
            atlas.warnings.append(message)
            logger.warning(message)
        logger.info(f"Enumerated {atlas.region_count} linear regions"
                    f"{' (incomplete)' if incomplete else ''}")
        return atlas


@dataclass
class RegionAtlas:
    regions: List[LinearRegion]
    box: np.ndarray
    incomplete: bool = False
    warnings: List[str] = field(default_factory=list)

    @property
    def region_count(self) -> int:
        return len(self.regions)

    @property
    def box_area(self) -> float:
        return float(np.prod(self.box[:, 1] - self.box[:, 0]))

    @property
    def total_area(self) -> float:
        return float(sum(r.area for r in self.regions))

    def partition_error(self) -> float:
        return abs(self.total_area - self.box_area) / self.box_area

    def find(self, point) -> Optional[LinearRegion]:
        for region in self.regions:
            if region.contains(point):
                return region
        return None

    def stats(self) -> Dict:
        areas = np.array([r.area for r in self.regions])
        gradient_norms = np.array([np.linalg.norm(r.output_gradient) for r in self.regions])
        return {
            "region_count": self.region_count,
            "total_area": self.total_area,
            "box_area": self.box_area,
            "mean_area": float(areas.mean()) if areas.size else 0.0,
            "min_area": float(areas.min()) if areas.size else 0.0,
            "mean_gradient_norm": float(gradient_norms.mean()) if gradient_norms.size else 0.0,
            "max_gradient_norm": float(gradient_norms.max()) if gradient_norms.size else 0.0,
            "incomplete": self.incomplete,
            "warnings": len(self.warnings),
        }

    def to_dict(self) -> Dict:
        return {
            "box": self.box.tolist(),
            "incomplete": self.incomplete,
            "warnings": list(self.warnings),
            "stats": self.stats(),
            "regions": [r.to_dict() for r in self.regions],
        }

    def save(self, path: Union[str, Path]) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))

    @classmethod
    def from_dict(cls, data: Dict, n_hidden: int) -> "RegionAtlas":
        regions = []
        for entry in data["regions"]:
            regions.append(LinearRegion(
                ActivationPattern.from_hex(entry["pattern"], n_hidden),
                np.array(entry["vertices"], dtype=np.float64).reshape(-1, 2),
                np.array(entry["gradient"], dtype=np.float64),
                np.array(entry["offset"], dtype=np.float64),
            ))
        return cls(regions, np.array(data["box"], dtype=np.float64), data["incomplete"], list(data["warnings"]))

    @classmethod
    def load(cls, path: Union[str, Path], n_hidden: int) -> "RegionAtlas":
        return cls.from_dict(json.loads(Path(path).read_text()), n_hidden)


def region_of(net: Network, seed_point) -> LinearRegion:
    return RegionExplorer(net).region_of(seed_point)


def enumerate_regions(net: Network, max_regions: int = MAX_REGIONS, box: Optional[np.ndarray] = None) -> RegionAtlas:
    return RegionExplorer(net, box).enumerate(max_regions)


def region_oracle_min(
    source: Union[Network, RegionAtlas], objective: Optional[Sequence[float]] = None
) -> Tuple[np.ndarray, float]:
    """
    Minimize a linear function of the outputs by checking every region's vertices.

    Args:
        source: Network (enumerated on the fly) or a complete atlas
        objective: Weights on the outputs (defaults to the first output)

    Returns:
        (minimizing input, minimum value)

    Raises:
        IncompleteAtlasError: if the atlas is truncated
    """
    atlas = enumerate_regions(source) if isinstance(source, Network) else source
    if atlas.incomplete:
        raise IncompleteAtlasError("the region atlas is incomplete; the oracle minimum would be unreliable")
    best_x, best_value = None, np.inf
    for region in atlas.regions:
        c = np.zeros(region.output_offset.size) if objective is None else np.asarray(objective, dtype=np.float64)
        if objective is None:
            c[0] = 1.0
        values = region.evaluate(region.vertices) @ c
        i = int(np.argmin(values))
        if values[i] < best_value:
            best_value = float(values[i])
            best_x = region.vertices[i].copy()
    return best_x, best_value
