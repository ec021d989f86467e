"""
Equivalent rescaling of ReLU networks.

Positive homogeneity lets every hidden neuron's incoming weights and bias be
multiplied by c > 0 and its outgoing weights divided by c without changing the
function. In log variables the l1 norm of all scalable weights and biases is a
sum of exponentials of affine functions, which is minimized here by projected
gradient descent with Armijo backtracking.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Tuple

import numpy as np
from scipy import sparse
from scipy.stats import qmc

from .. import ScalingEquivalenceError, UnsupportedActivationError
from ..models.network import Network, ScalingFactors

logger = logging.getLogger(__name__)

CLAMP = 20.0
GRADIENT_TOL = 1e-8
ARMIJO = 1e-4
MAX_ITERATIONS = 20_000
MAX_BACKTRACKS = 60
CHECK_POINTS = 32
EQUIVALENCE_TOLERANCE = 1e-6


class ScalingStatus(str, Enum):
    CONVERGED = "converged"
    CLAMPED = "clamped"
    MAX_ITERATIONS = "max_iterations"
    LINE_SEARCH_FAILED = "line_search_failed"


@dataclass
class ScalingProblem:
    """
    min sum_t exp(constants_t + (incidence @ c)_t) over log factors c.

    Variables are the hidden neurons in layer order; ``free`` is False for
    dead neurons, which stay at c = 0. ``fixed`` is the l1 norm of the output
    bias, which no scaling touches.
    """

    constants: np.ndarray
    incidence: sparse.csr_matrix
    layer_sizes: List[int]
    free: np.ndarray
    fixed: float = 0.0
    clamp: float = CLAMP

    @property
    def n_vars(self) -> int:
        return int(sum(self.layer_sizes))

    @property
    def n_terms(self) -> int:
        return self.constants.size

    def objective(self, c: np.ndarray) -> float:
        if self.n_terms == 0:
            return self.fixed
        with np.errstate(over="ignore"):
            return float(np.exp(self.constants + self.incidence @ c).sum()) + self.fixed

    def gradient(self, c: np.ndarray) -> np.ndarray:
        if self.n_terms == 0:
            return np.zeros(self.n_vars)
        with np.errstate(over="ignore"):
            return self.incidence.T @ np.exp(self.constants + self.incidence @ c)

    def split(self, c: np.ndarray) -> List[np.ndarray]:
        """Per-layer slices of a variable vector."""
        return np.split(np.asarray(c), np.cumsum(self.layer_sizes)[:-1]) if self.layer_sizes else []


@dataclass
class ScalingSolution:
    factors: ScalingFactors
    objective_before: float
    objective_after: float
    gradient_norm: float
    iterations: int
    status: ScalingStatus
    clamped: int = 0
    log_factors: List[np.ndarray] = field(default_factory=list, repr=False)

    def to_dict(self) -> Dict:
        return {
            "status": self.status.value,
            "objective_before": self.objective_before,
            "objective_after": self.objective_after,
            "gradient_norm": self.gradient_norm,
            "iterations": self.iterations,
            "clamped": self.clamped,
            "factors": [c.tolist() for c in self.factors.factors],
        }


def build_problem(net: Network) -> ScalingProblem:
    """
    Collect one term per nonzero scalable weight or hidden bias.

    Args:
        net: Plain ReLU network

    Returns:
        ScalingProblem over the log factors of all hidden neurons
    """
    if not net.is_relu:
        raise UnsupportedActivationError("equivalent scaling requires plain ReLU hidden layers")
    sizes = net.hidden_sizes
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)

    constants: List[float] = []
    rows: List[int] = []
    cols: List[int] = []
    vals: List[float] = []

    def add_term(value: float, plus: int = -1, minus: int = -1) -> None:
        t = len(constants)
        constants.append(np.log(abs(value)))
        if plus >= 0:
            rows.append(t)
            cols.append(plus)
            vals.append(1.0)
        if minus >= 0:
            rows.append(t)
            cols.append(minus)
            vals.append(-1.0)

    last = net.depth - 1
    for k, layer in enumerate(net.layers):
        scaled_rows = k < last
        for i, j in zip(*np.nonzero(layer.weights)):
            plus = offsets[k] + i if scaled_rows else -1
            minus = offsets[k - 1] + j if k > 0 else -1
            add_term(layer.weights[i, j], plus, minus)
        if scaled_rows:
            for i in np.flatnonzero(layer.bias):
                add_term(layer.bias[i], offsets[k] + i)

    n_vars = int(offsets[-1])
    incidence = sparse.csr_matrix((vals, (rows, cols)), shape=(len(constants), n_vars))
    free = np.ones(n_vars, dtype=bool)
    for k, i in net.dead_neurons():
        free[offsets[k - 1] + i] = False
    fixed = float(np.abs(net.layers[-1].bias).sum())
    return ScalingProblem(np.array(constants, dtype=np.float64), incidence, sizes, free, fixed)


def _projected_gradient(c: np.ndarray, grad: np.ndarray, problem: ScalingProblem) -> np.ndarray:
    projected = np.where(problem.free, grad, 0.0)
    at_upper = (c >= problem.clamp) & (projected < 0)
    at_lower = (c <= -problem.clamp) & (projected > 0)
    projected[at_upper | at_lower] = 0.0
    return projected


def solve_scaling(
    problem: ScalingProblem, tol: float = GRADIENT_TOL, max_iterations: int = MAX_ITERATIONS
) -> ScalingSolution:
    """
    Minimize the scaling objective from c = 0.

    Args:
        problem: Problem from ``build_problem``
        tol: Infinity-norm tolerance on the projected gradient
        max_iterations: Iteration cap

    Returns:
        ScalingSolution with c = exp(log factors)
    """
    c = np.zeros(problem.n_vars)
    value = problem.objective(c)
    before = value
    step = 1.0
    status = ScalingStatus.MAX_ITERATIONS
    iterations = 0
    grad = _projected_gradient(c, problem.gradient(c), problem)

    for iterations in range(1, max_iterations + 1):
        if np.max(np.abs(grad), initial=0.0) <= tol:
            status = ScalingStatus.CONVERGED
            iterations -= 1
            break
        accepted = False
        for _ in range(MAX_BACKTRACKS):
            candidate = np.clip(c - step * grad, -problem.clamp, problem.clamp)
            candidate_value = problem.objective(candidate)
            if np.isfinite(candidate_value) and candidate_value <= value + ARMIJO * grad @ (candidate - c):
                accepted = True
                break
            step *= 0.5
        if not accepted:
            status = ScalingStatus.LINE_SEARCH_FAILED
            logger.warning(f"Scaling line search failed at iteration {iterations} (objective {value:.6g})")
            break
        c, value = candidate, candidate_value
        grad = _projected_gradient(c, problem.gradient(c), problem)
        step *= 2.0

    clamped = int(np.count_nonzero(problem.free & (np.abs(c) >= problem.clamp)))
    if clamped and status == ScalingStatus.CONVERGED:
        status = ScalingStatus.CLAMPED
    if clamped:
        logger.warning(f"{clamped} scaling variables hit the clamp |log c| = {problem.clamp}")

    log_factors = problem.split(c)
    return ScalingSolution(
        factors=ScalingFactors.from_log(log_factors),
        objective_before=before,
        objective_after=value,
        gradient_norm=float(np.max(np.abs(grad), initial=0.0)),
        iterations=iterations,
        status=status,
        clamped=clamped,
        log_factors=log_factors,
    )


def check_points(net: Network, n_points: int = CHECK_POINTS, seed: int = 0) -> np.ndarray:
    """Scrambled Sobol points in the network's input box."""
    sampler = qmc.Sobol(d=net.n_inputs, scramble=True, seed=seed)
    return qmc.scale(sampler.random(n_points), net.input_bounds[:, 0], net.input_bounds[:, 1])


def check_equivalence(original: Network, scaled: Network, points: np.ndarray) -> Tuple[float, np.ndarray]:
    """Largest absolute output deviation over ``points`` and where it occurs."""
    deviation = np.abs(scaled.forward(points) - original.forward(points)).max(axis=1)
    worst = int(np.argmax(deviation))
    return float(deviation[worst]), points[worst]


def scale_network(net: Network, tol: float = GRADIENT_TOL) -> Tuple[Network, ScalingSolution]:
    """
    Rescale a ReLU network to minimal l1 norm and verify equivalence.

    Raises:
        ScalingEquivalenceError: if a check point deviates by more than 1e-6
    """
    if not net.is_relu:
        raise UnsupportedActivationError("equivalent scaling requires plain ReLU hidden layers")
    if net.depth == 1:
        solution = ScalingSolution(ScalingFactors(()), net.l1_norm(), net.l1_norm(), 0.0, 0,
                                   ScalingStatus.CONVERGED)
        return net, solution

    problem = build_problem(net)
    solution = solve_scaling(problem, tol)
    scaled = net.apply_scaling(solution.factors)

    deviation, point = check_equivalence(net, scaled, check_points(net))
    if deviation > EQUIVALENCE_TOLERANCE:
        raise ScalingEquivalenceError(deviation, point)
    logger.info(f"Scaling {solution.status.value} after {solution.iterations} iterations: "
                f"l1 {solution.objective_before:.6g} -> {solution.objective_after:.6g}")
    return scaled, solution
