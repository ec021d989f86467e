"""
LP-based bound tightening (OBBT).

Sweeps hidden neurons layer by layer in index order. For each neuron the
pre-activation is minimized and maximized over the LP relaxation of the network
prefix encoded with the current bounds; results are intersected with the
incumbent bounds, so bounds never loosen.
"""
import logging
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from joblib import Parallel, delayed

from ..models.network import Network
from .bounds_engine import BoundsSet, classify, propagate_output_bounds
from .lp_solver import LpModel, LpSolution, Sense, solve_lp
from .milp_encoder import encode

logger = logging.getLogger(__name__)

# Relative outward margin applied to LP optima before installing them
SAFETY_MARGIN = 1e-9


@dataclass
class ObbtReport:
    bounds: BoundsSet
    lp_count: int
    newly_stable: int
    lp_time: float
    passes: int
    completed: bool = True
    warnings: List[str] = field(default_factory=list)
    lps_per_neuron: int = 2

    def to_dict(self) -> Dict:
        return {
            "provenance": self.bounds.provenance.value,
            "lp_count": self.lp_count,
            "lps_per_neuron": self.lps_per_neuron,
            "newly_stable": self.newly_stable,
            "lp_time": self.lp_time,
            "passes": self.passes,
            "completed": self.completed,
            "warnings": list(self.warnings),
            "stable_percentage": classify(self.bounds).stable_percentage,
            "mean_hidden_width": self.bounds.mean_hidden_width(),
        }


def _margin(value: float) -> float:
    return SAFETY_MARGIN * max(1.0, abs(value))


def _solve_pair(lp: LpModel, c: np.ndarray, parallel: bool) -> Tuple[LpSolution, LpSolution]:
    models = (lp.with_objective(c, Sense.MIN), lp.with_objective(c, Sense.MAX))
    if parallel:
        low, high = Parallel(n_jobs=2, prefer="threads")(delayed(solve_lp)(m) for m in models)
        return low, high
    return solve_lp(models[0]), solve_lp(models[1])


def obbt(
    net: Network,
    bounds: BoundsSet,
    time_budget: Optional[float] = None,
    passes: int = 1,
    parallel: bool = False,
) -> ObbtReport:
    """
    Tighten hidden-layer bounds with two LPs per neuron.

    Args:
        net: ReLU or clipped-ReLU network
        bounds: Valid starting bounds (IA or an earlier OBBT result)
        time_budget: Wall-clock seconds; neurons not reached keep their bounds
        passes: Number of full sweeps
        parallel: Solve each neuron's min and max LP concurrently

    Returns:
        ObbtReport with the tightened bounds
    """
    start = time.perf_counter()
    lower = [v.copy() for v in bounds.lower]
    upper = [v.copy() for v in bounds.upper]
    stable_before = classify(bounds).stable_count
    warnings: List[str] = []
    lp_count = 0
    lp_time = 0.0
    completed = True
    passes_run = 0

    for _ in range(passes):
        passes_run += 1
        for k in range(1, net.depth):
            current = bounds.replace(lower=lower, upper=upper)
            model = encode(net, current, hidden_layers=k - 1)
            for i in range(net.layers[k - 1].n_out):
                if time_budget is not None and time.perf_counter() - start > time_budget:
                    completed = False
                    break
                c, constant = model.pre_activation(k, i)
                lp_start = time.perf_counter()
                low, high = _solve_pair(model.lp, c, parallel)
                lp_time += time.perf_counter() - lp_start
                lp_count += 2

                new_lo, new_hi = lower[k - 1][i], upper[k - 1][i]
                if low.is_optimal:
                    value = low.objective + constant
                    new_lo = max(new_lo, value - _margin(value))
                else:
                    warnings.append(f"layer {k} neuron {i}: min LP {low.status.value}, kept L")
                if high.is_optimal:
                    value = high.objective + constant
                    new_hi = min(new_hi, value + _margin(value))
                else:
                    warnings.append(f"layer {k} neuron {i}: max LP {high.status.value}, kept U")
                if new_lo > new_hi:
                    warnings.append(f"layer {k} neuron {i}: LP bounds crossed, kept previous")
                    continue
                lower[k - 1][i], upper[k - 1][i] = new_lo, new_hi
            if not completed:
                break
        if not completed:
            break

    tightened = bounds.replace(lower=lower, upper=upper)
    out_lo, out_hi = propagate_output_bounds(net, tightened)
    lower[-1] = np.maximum(lower[-1], out_lo)
    upper[-1] = np.minimum(upper[-1], out_hi)
    tightened = bounds.replace(lower=lower, upper=upper, provenance=bounds.provenance.tightened())

    for message in warnings:
        logger.warning(f"OBBT: {message}")
    if not completed:
        logger.warning(f"OBBT time budget of {time_budget}s exhausted after {lp_count} LPs")

    newly_stable = classify(tightened).stable_count - stable_before
    logger.info(f"OBBT finished: {lp_count} LPs in {lp_time:.2f}s, {newly_stable} newly stable neurons")
    return ObbtReport(tightened, lp_count, newly_stable, lp_time, passes_run, completed, warnings)
