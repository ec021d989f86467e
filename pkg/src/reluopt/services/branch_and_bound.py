"""
Branch-and-bound over big-M network encodings.

Best-bound node selection on the LP relaxation, branching on the most
fractional binary. Incumbents come from evaluating the network at the input
part of node relaxations and from a rounding LP with the binaries fixed.
"""
import heapq
import itertools
import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from ..models.network import Network
from .bounds_engine import BoundsSet, ia_bounds
from .lp_solver import LpSolution, LpStatus, solve_lp
from .milp_encoder import MilpModel, encode

logger = logging.getLogger(__name__)

GAP_TOLERANCE = 1e-6
INTEGRALITY_TOL = 1e-6
HEURISTIC_EVERY = 10


class BnbStatus(str, Enum):
    OPTIMAL = "optimal"
    TIME_LIMIT = "time_limit"
    INFEASIBLE = "infeasible"


@dataclass
class BnbResult:
    """
    Outcome of a branch-and-bound run.

    For maximization problems ``objective`` and ``best_bound`` are reported in
    the maximization sense (best_bound is then an upper bound).
    """

    status: BnbStatus
    x: Optional[np.ndarray]
    objective: float
    best_bound: float
    gap: float
    nodes: int
    wall_time: float
    sense: str = "min"
    numerical_failures: int = 0
    trace: List[Dict] = field(default_factory=list, repr=False)

    @property
    def solved(self) -> bool:
        return self.status == BnbStatus.OPTIMAL

    def to_dict(self) -> Dict:
        return {
            "status": self.status.value,
            "x": None if self.x is None else self.x.tolist(),
            "objective": self.objective,
            "best_bound": self.best_bound,
            "gap": self.gap,
            "nodes": self.nodes,
            "wall_time": self.wall_time,
            "sense": self.sense,
            "numerical_failures": self.numerical_failures,
        }

    def write_trace(self, path: Union[str, Path]) -> None:
        """Per-node trace as CSV (node id, depth, bound, incumbent, outcome)."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        columns = ["node", "depth", "bound", "incumbent", "outcome"]
        pd.DataFrame(self.trace, columns=columns).to_csv(path, index=False, float_format="%.17g")


@dataclass
class _Node:
    node_id: int
    depth: int
    bound: float
    fixed_lower: np.ndarray
    fixed_upper: np.ndarray


def _relative_gap(incumbent: float, bound: float) -> float:
    if not np.isfinite(incumbent):
        return np.inf
    return max(0.0, (incumbent - bound) / max(1.0, abs(incumbent)))


class BranchAndBound:
    """
    Minimizes a linear function of the network outputs over an input box.

    Args:
        net: Network
        model: Encoding of ``net`` (its input box defines the search space)
        output_coefficients: Objective weights on the network outputs
        time_limit: Wall-clock seconds, checked between node solves
        workers: Number of node relaxations solved concurrently
    """

    def __init__(self, net: Network, model: MilpModel, output_coefficients: Sequence[float],
                 time_limit: float = 300.0, workers: int = 1):
        self.net = net
        self.model = model
        self.coefficients = np.asarray(output_coefficients, dtype=np.float64)
        self.lp = model.lp.with_objective(model.output_objective(self.coefficients))
        self.box = np.column_stack([model.lp.lower[model.input_vars], model.lp.upper[model.input_vars]])
        self.binaries = np.array(model.binaries, dtype=int)
        self.time_limit = time_limit
        self.workers = max(1, int(workers))

        self.incumbent_value = np.inf
        self.incumbent_x = None
        self.nodes = 0
        self.numerical_failures = 0
        self.trace: List[Dict] = []
        self._seq = itertools.count()

    def evaluate(self, x: np.ndarray) -> float:
        return float(self.coefficients @ self.net.forward(x))

    def _offer(self, x: np.ndarray) -> None:
        x = np.clip(x, self.box[:, 0], self.box[:, 1])
        value = self.evaluate(x)
        if value < self.incumbent_value:
            self.incumbent_value = value
            self.incumbent_x = x

    def _solve_node(self, node: _Node) -> LpSolution:
        lower = self.lp.lower.copy()
        upper = self.lp.upper.copy()
        lower[self.binaries] = node.fixed_lower
        upper[self.binaries] = node.fixed_upper
        return solve_lp(self.lp.with_bounds(lower, upper))

    def _rounding_heuristic(self, solution: LpSolution) -> None:
        z = np.round(solution.x[self.binaries])
        lower = self.lp.lower.copy()
        upper = self.lp.upper.copy()
        lower[self.binaries] = z
        upper[self.binaries] = z
        rounded = solve_lp(self.lp.with_bounds(lower, upper))
        if rounded.is_optimal:
            self._offer(rounded.x[self.model.input_vars])

    def _prune_threshold(self) -> float:
        if not np.isfinite(self.incumbent_value):
            return np.inf
        return self.incumbent_value - GAP_TOLERANCE * max(1.0, abs(self.incumbent_value))

    def _process(self, node: _Node, solution: LpSolution, heap: List) -> None:
        """Update incumbent and children for one solved node."""
        self.nodes += 1
        row = {"node": node.node_id, "depth": node.depth, "bound": node.bound}

        if solution.status == LpStatus.INFEASIBLE:
            row.update(incumbent=self.incumbent_value, outcome="infeasible")
            self.trace.append(row)
            return

        if not solution.is_optimal:
            self.numerical_failures += 1
            logger.warning(f"Node {node.node_id}: LP {solution.status.value}")
            free = np.flatnonzero(node.fixed_lower != node.fixed_upper)
            if free.size:
                self._branch(node, int(free[0]), node.bound, heap)
                row.update(incumbent=self.incumbent_value, outcome="lp_failure_branched")
            else:
                row.update(incumbent=self.incumbent_value, outcome="lp_failure_dropped")
            self.trace.append(row)
            return

        bound = max(solution.objective, node.bound)
        row["bound"] = bound
        self._offer(solution.x[self.model.input_vars])
        if node.node_id == 0 or self.nodes % HEURISTIC_EVERY == 0:
            if self.binaries.size:
                self._rounding_heuristic(solution)

        if bound >= self._prune_threshold():
            row.update(incumbent=self.incumbent_value, outcome="pruned")
            self.trace.append(row)
            return

        z = solution.x[self.binaries]
        fractionality = np.abs(z - np.round(z))
        if self.binaries.size == 0 or np.all(fractionality <= INTEGRALITY_TOL):
            row.update(incumbent=self.incumbent_value, outcome="integral")
            self.trace.append(row)
            return

        # Most fractional binary; argmin keeps the lowest (layer, neuron) on ties
        closeness = np.where(fractionality > INTEGRALITY_TOL, np.abs(z - 0.5), np.inf)
        self._branch(node, int(np.argmin(closeness)), bound, heap)
        row.update(incumbent=self.incumbent_value, outcome="branched")
        self.trace.append(row)

    def _branch(self, node: _Node, position: int, bound: float, heap: List) -> None:
        for value in (0.0, 1.0):
            lower = node.fixed_lower.copy()
            upper = node.fixed_upper.copy()
            lower[position] = value
            upper[position] = value
            child = _Node(next(self._seq), node.depth + 1, bound, lower, upper)
            heapq.heappush(heap, (bound, child.node_id, child))

    def solve(self) -> BnbResult:
        start = time.perf_counter()
        self._seq = itertools.count()
        self._offer(self.box.mean(axis=1))

        root = _Node(next(self._seq), 0, -np.inf, np.zeros(self.binaries.size), np.ones(self.binaries.size))
        heap: List[Tuple[float, int, _Node]] = [(root.bound, root.node_id, root)]
        status = BnbStatus.OPTIMAL
        root_infeasible = False

        while heap:
            global_bound = min(heap[0][0], self.incumbent_value)
            if _relative_gap(self.incumbent_value, global_bound) <= GAP_TOLERANCE:
                break
            if time.perf_counter() - start > self.time_limit:
                status = BnbStatus.TIME_LIMIT
                break

            batch = []
            while heap and len(batch) < self.workers:
                bound, _, node = heapq.heappop(heap)
                if bound >= self._prune_threshold():
                    heap.clear()
                    break
                batch.append(node)
            if not batch:
                break

            if self.workers > 1 and len(batch) > 1:
                solutions = Parallel(n_jobs=self.workers, prefer="threads")(
                    delayed(self._solve_node)(node) for node in batch
                )
            else:
                solutions = [self._solve_node(node) for node in batch]

            for node, solution in zip(batch, solutions):
                if node.node_id == 0 and solution.status == LpStatus.INFEASIBLE:
                    root_infeasible = True
                self._process(node, solution, heap)

        if root_infeasible:
            status = BnbStatus.INFEASIBLE
        open_bound = heap[0][0] if heap else np.inf
        best_bound = min(open_bound, self.incumbent_value)
        gap = _relative_gap(self.incumbent_value, best_bound)
        wall_time = time.perf_counter() - start
        logger.info(f"Branch-and-bound {status.value}: objective {self.incumbent_value:.6g}, "
                    f"bound {best_bound:.6g}, {self.nodes} nodes, {wall_time:.2f}s")
        return BnbResult(
            status=status,
            x=self.incumbent_x if status != BnbStatus.INFEASIBLE else None,
            objective=self.incumbent_value if status != BnbStatus.INFEASIBLE else np.nan,
            best_bound=best_bound,
            gap=gap,
            nodes=self.nodes,
            wall_time=wall_time,
            numerical_failures=self.numerical_failures,
            trace=self.trace,
        )


def _default_coefficients(net: Network, output_coefficients) -> np.ndarray:
    if output_coefficients is not None:
        return np.asarray(output_coefficients, dtype=np.float64)
    if net.n_outputs != 1:
        raise ValueError("multi-output networks need explicit output coefficients")
    return np.ones(1)


def solve_min(
    net: Network,
    bounds: Optional[BoundsSet] = None,
    time_limit: float = 300.0,
    output_coefficients: Optional[Sequence[float]] = None,
    workers: int = 1,
) -> BnbResult:
    """
    Globally minimize the network output over its input box.

    Args:
        net: Network
        bounds: Big-M source (IA bounds when omitted)
        time_limit: Wall-clock seconds
        output_coefficients: Weights on the outputs (defaults to the single output)
        workers: Concurrent node relaxations

    Returns:
        BnbResult with the minimizing input
    """
    bounds = ia_bounds(net) if bounds is None else bounds
    model = encode(net, bounds)
    return BranchAndBound(net, model, _default_coefficients(net, output_coefficients), time_limit, workers).solve()


def solve_adversarial(
    net: Network,
    x0: Sequence[float],
    delta: float,
    target: int,
    true_label: int,
    time_limit: float = 300.0,
    bounds: Optional[BoundsSet] = None,
    workers: int = 1,
) -> BnbResult:
    """
    Maximize h(x)_target - h(x)_true_label over the l-infinity ball of radius ``delta`` around ``x0``.

    Labels are 0-based output indices. A positive optimum certifies an adversarial
    example, a negative optimum certifies robustness at ``x0``.

    Args:
        net: Multi-output network
        x0: Reference input
        delta: Perturbation radius (0 allowed)
        target: Incorrect label k
        true_label: Correct label i
        time_limit: Wall-clock seconds
        bounds: Bounds valid on a box containing the ball (IA on the ball when omitted)
        workers: Concurrent node relaxations

    Returns:
        BnbResult in the maximization sense
    """
    if target == true_label:
        raise ValueError("target and true label must differ")
    for label in (target, true_label):
        if not 0 <= label < net.n_outputs:
            raise ValueError(f"label {label} out of range for {net.n_outputs} outputs")
    if delta < 0:
        raise ValueError(f"delta must be >= 0, got {delta}")
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.shape != (net.n_inputs,):
        raise ValueError(f"x0 must have length {net.n_inputs}")

    box = np.column_stack([
        np.maximum(x0 - delta, net.input_bounds[:, 0]),
        np.minimum(x0 + delta, net.input_bounds[:, 1]),
    ])
    if np.any(box[:, 0] > box[:, 1]):
        raise ValueError("the perturbation ball does not intersect the input box")

    bounds = ia_bounds(net, input_box=box) if bounds is None else bounds
    model = encode(net, bounds, input_box=box)
    coefficients = np.zeros(net.n_outputs)
    coefficients[true_label] = 1.0
    coefficients[target] = -1.0
    result = BranchAndBound(net, model, coefficients, time_limit, workers).solve()

    result.sense = "max"
    result.objective = -result.objective
    result.best_bound = -result.best_bound
    return result
