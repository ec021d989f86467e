"""
Dense linear-programming kernel.

Two-phase primal simplex with bounded variables on an explicit basis inverse.
Pricing is Dantzig's rule with a switch to Bland's rule after a run of
degenerate pivots, which makes every solve deterministic and finite.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

FEASIBILITY_TOL = 1e-7
OPTIMALITY_TOL = 1e-9
PIVOT_TOL = 1e-10
DEGENERATE_STEP = 1e-12
STALL_THRESHOLD = 50
REFACTOR_EVERY = 100


class Relation(str, Enum):
    LE = "<="
    EQ = "="
    GE = ">="


class Sense(str, Enum):
    MIN = "min"
    MAX = "max"


class LpStatus(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    NUMERICAL_FAILURE = "numerical_failure"


@dataclass(frozen=True, eq=False)
class LpModel:
    """
    min/max c.x  s.t.  A x (<=|=|>=) b,  lower <= x <= upper.

    Bounds may be infinite; every coefficient must be finite.
    """

    c: np.ndarray
    A: np.ndarray
    relations: Tuple[Relation, ...]
    rhs: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    sense: Sense = Sense.MIN
    var_names: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        c = np.array(self.c, dtype=np.float64).reshape(-1)
        n = c.size
        A = np.array(self.A, dtype=np.float64).reshape(-1, n) if n else np.zeros((len(self.relations), 0))
        rhs = np.array(self.rhs, dtype=np.float64).reshape(-1)
        lower = np.array(self.lower, dtype=np.float64).reshape(-1)
        upper = np.array(self.upper, dtype=np.float64).reshape(-1)
        relations = tuple(Relation(r) for r in self.relations)
        if A.shape[0] != rhs.size or len(relations) != rhs.size:
            raise ValueError(f"{A.shape[0]} rows, {len(relations)} relations and {rhs.size} right-hand sides")
        if lower.size != n or upper.size != n:
            raise ValueError(f"bounds must have length {n}")
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(A)) and np.all(np.isfinite(rhs))):
            raise ValueError("objective, row coefficients and right-hand sides must be finite")
        if np.any(np.isnan(lower)) or np.any(np.isnan(upper)):
            raise ValueError("variable bounds must not be NaN")
        for name, value in (("c", c), ("A", A), ("rhs", rhs), ("lower", lower), ("upper", upper)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        object.__setattr__(self, "relations", relations)
        object.__setattr__(self, "sense", Sense(self.sense))

    @property
    def n_vars(self) -> int:
        return self.c.size

    @property
    def n_rows(self) -> int:
        return self.rhs.size

    def relation_codes(self) -> np.ndarray:
        """-1 for <=, 0 for =, +1 for >=."""
        code = {Relation.LE: -1, Relation.EQ: 0, Relation.GE: 1}
        return np.array([code[r] for r in self.relations], dtype=np.int8)

    def with_bounds(self, lower: np.ndarray, upper: np.ndarray) -> "LpModel":
        return LpModel(self.c, self.A, self.relations, self.rhs, lower, upper, self.sense, self.var_names)

    def with_objective(self, c: np.ndarray, sense: Sense = Sense.MIN) -> "LpModel":
        return LpModel(c, self.A, self.relations, self.rhs, self.lower, self.upper, sense, self.var_names)

    def residual(self, x: np.ndarray) -> float:
        """Largest violation of any row or variable bound at ``x``."""
        x = np.asarray(x, dtype=np.float64)
        activity = self.A @ x - self.rhs
        codes = self.relation_codes()
        row_viol = np.where(codes < 0, activity, np.where(codes > 0, -activity, np.abs(activity)))
        bound_viol = np.maximum(self.lower - x, x - self.upper)
        return float(max(np.max(row_viol, initial=0.0), np.max(bound_viol, initial=0.0), 0.0))

    def objective_value(self, x: np.ndarray) -> float:
        return float(self.c @ np.asarray(x, dtype=np.float64))

    def to_lp_text(self, binaries: Sequence[int] = ()) -> str:
        """Dump in CPLEX LP file format."""
        names = self.var_names or tuple(f"x{j}" for j in range(self.n_vars))

        def linear(coeffs) -> str:
            terms = [f"{'+' if v >= 0 else '-'} {abs(v):.17g} {names[j]}" for j, v in enumerate(coeffs) if v != 0]
            return " ".join(terms) if terms else "0 " + names[0]

        lines = ["\\ reluopt LP export", "Minimize" if self.sense == Sense.MIN else "Maximize"]
        lines.append(f" obj: {linear(self.c)}")
        lines.append("Subject To")
        for i, (row, rel, b) in enumerate(zip(self.A, self.relations, self.rhs)):
            lines.append(f" c{i}: {linear(row)} {rel.value} {b:.17g}")
        lines.append("Bounds")
        for j in range(self.n_vars):
            lo, hi = self.lower[j], self.upper[j]
            if np.isinf(lo) and np.isinf(hi):
                lines.append(f" {names[j]} free")
            else:
                lo_s = "-inf" if np.isinf(lo) else f"{lo:.17g}"
                hi_s = "+inf" if np.isinf(hi) else f"{hi:.17g}"
                lines.append(f" {lo_s} <= {names[j]} <= {hi_s}")
        if binaries:
            lines.append("Binaries")
            lines.append(" " + " ".join(names[j] for j in binaries))
        lines.append("End")
        return "\n".join(lines) + "\n"


@dataclass
class LpSolution:
    status: LpStatus
    x: Optional[np.ndarray]
    objective: float
    iterations: int
    message: str = ""

    @property
    def is_optimal(self) -> bool:
        return self.status == LpStatus.OPTIMAL

    def to_dict(self) -> Dict:
        return {
            "status": self.status.value,
            "x": None if self.x is None else self.x.tolist(),
            "objective": self.objective,
            "iterations": self.iterations,
            "message": self.message,
        }


class _SingularBasis(Exception):
    pass


class _BoundedSimplex:
    """Simplex state over the column set [structural | slack | artificial]."""

    def __init__(self, A: np.ndarray, b: np.ndarray, lower: np.ndarray, upper: np.ndarray,
                 basis: np.ndarray, x: np.ndarray, max_iterations: int):
        self.A = A
        self.b = b
        self.lower = lower
        self.upper = upper
        self.basis = basis
        self.is_basic = np.zeros(A.shape[1], dtype=bool)
        self.is_basic[basis] = True
        self.x = x
        self.max_iterations = max_iterations
        self.iterations = 0
        self.B_inv = None
        self.refactor()

    def refactor(self):
        m = self.A.shape[0]
        if m == 0:
            self.B_inv = np.zeros((0, 0))
            return
        try:
            self.B_inv = np.linalg.inv(self.A[:, self.basis])
        except np.linalg.LinAlgError:
            raise _SingularBasis() from None
        if not np.all(np.isfinite(self.B_inv)):
            raise _SingularBasis()
        nonbasic = ~self.is_basic
        self.x[self.basis] = self.B_inv @ (self.b - self.A[:, nonbasic] @ self.x[nonbasic])

    def _price(self, d: np.ndarray, bland: bool) -> Optional[int]:
        can_increase = self.x < self.upper
        can_decrease = self.x > self.lower
        eligible = ~self.is_basic & (((d < -OPTIMALITY_TOL) & can_increase) | ((d > OPTIMALITY_TOL) & can_decrease))
        candidates = np.flatnonzero(eligible)
        if candidates.size == 0:
            return None
        if bland:
            return int(candidates[0])
        return int(candidates[np.argmax(np.abs(d[candidates]))])

    def _ratio_test(self, j: int, direction: float, alpha: np.ndarray, bland: bool):
        rate = -direction * alpha
        basic = self.basis
        xb = self.x[basic]
        steps = np.full(basic.size, np.inf)
        decreasing = rate < -PIVOT_TOL
        increasing = rate > PIVOT_TOL
        steps[decreasing] = (xb[decreasing] - self.lower[basic][decreasing]) / -rate[decreasing]
        steps[increasing] = (self.upper[basic][increasing] - xb[increasing]) / rate[increasing]
        steps = np.maximum(steps, 0.0)

        flip = self.upper[j] - self.lower[j]
        best = steps.min() if steps.size else np.inf
        if flip <= best:
            return flip, None, False, rate
        if not np.isfinite(best):
            return np.inf, None, False, rate

        ties = np.flatnonzero(steps <= best + DEGENERATE_STEP)
        if bland:
            leave = int(ties[np.argmin(basic[ties])])
        else:
            leave = int(ties[np.argmax(np.abs(alpha[ties]))])
        return best, leave, bool(increasing[leave]), rate

    def run(self, cost: np.ndarray) -> str:
        """Iterate to optimality; returns 'optimal', 'unbounded', 'iteration_limit' or 'singular'."""
        bland = False
        stalled = 0
        since_refactor = 0
        while True:
            if self.iterations >= self.max_iterations:
                return "iteration_limit"
            if since_refactor >= REFACTOR_EVERY:
                try:
                    self.refactor()
                except _SingularBasis:
                    return "singular"
                since_refactor = 0

            duals = cost[self.basis] @ self.B_inv
            reduced = cost - duals @ self.A
            j = self._price(reduced, bland)
            if j is None:
                return "optimal"

            direction = 1.0 if reduced[j] < 0 else -1.0
            alpha = self.B_inv @ self.A[:, j]
            step, leave, to_upper, rate = self._ratio_test(j, direction, alpha, bland)
            if not np.isfinite(step):
                return "unbounded"

            self.iterations += 1
            since_refactor += 1
            if step <= DEGENERATE_STEP:
                stalled += 1
                if stalled > STALL_THRESHOLD and not bland:
                    logger.debug(f"Switching to Bland's rule after {stalled} degenerate pivots")
                    bland = True
            else:
                stalled = 0

            self.x[self.basis] += rate * step
            if leave is None:
                self.x[j] = self.upper[j] if direction > 0 else self.lower[j]
                continue

            leaving = self.basis[leave]
            self.x[leaving] = self.upper[leaving] if to_upper else self.lower[leaving]
            self.x[j] += direction * step

            row = self.B_inv[leave] / alpha[leave]
            self.B_inv -= np.outer(alpha, row)
            self.B_inv[leave] = row
            self.basis[leave] = j
            self.is_basic[leaving] = False
            self.is_basic[j] = True

    def drive_out(self, artificial: np.ndarray) -> None:
        """Pivot zero-valued basic artificials out of the basis where a non-artificial column allows it."""
        for pos in range(self.basis.size):
            if not artificial[self.basis[pos]]:
                continue
            row = self.B_inv[pos] @ self.A
            row[self.is_basic | artificial] = 0.0
            j = int(np.argmax(np.abs(row)))
            if abs(row[j]) <= 1e-7:
                continue
            alpha = self.B_inv @ self.A[:, j]
            leaving = self.basis[pos]
            pivot_row = self.B_inv[pos] / alpha[pos]
            self.B_inv -= np.outer(alpha, pivot_row)
            self.B_inv[pos] = pivot_row
            self.basis[pos] = j
            self.is_basic[leaving] = False
            self.is_basic[j] = True
            self.x[leaving] = 0.0
        self.refactor()


def _initial_value(lo: float, hi: float) -> float:
    if np.isfinite(lo):
        return lo
    if np.isfinite(hi):
        return hi
    return 0.0


def solve_lp(model: LpModel, max_iterations: Optional[int] = None) -> LpSolution:
    """
    Solve an LP to a vertex optimum.

    Args:
        model: LP to solve
        max_iterations: Pivot limit over both phases (default scales with size)

    Returns:
        LpSolution; NUMERICAL_FAILURE is returned instead of an unreliable optimum
    """
    n, m = model.n_vars, model.n_rows
    if np.any(model.lower > model.upper):
        return LpSolution(LpStatus.INFEASIBLE, None, np.nan, 0, "empty variable bounds")
    if max_iterations is None:
        max_iterations = max(10_000, 20 * (n + m))

    codes = model.relation_codes()
    slack_lower = np.where(codes < 0, 0.0, np.where(codes > 0, -np.inf, 0.0))
    slack_upper = np.where(codes < 0, np.inf, 0.0)

    x_struct = np.array([_initial_value(lo, hi) for lo, hi in zip(model.lower, model.upper)])
    residual = model.rhs - model.A @ x_struct
    fits = (residual >= slack_lower - FEASIBILITY_TOL) & (residual <= slack_upper + FEASIBILITY_TOL)
    needs_artificial = np.flatnonzero(~fits)
    n_art = needs_artificial.size

    # Columns: structural, one slack per row (A x + s = b), artificials for rows the slack cannot absorb
    artificial_cols = np.zeros((m, n_art))
    artificial_cols[needs_artificial, np.arange(n_art)] = np.sign(residual[needs_artificial])
    A_full = np.hstack([model.A, np.eye(m), artificial_cols])
    lower = np.concatenate([model.lower, slack_lower, np.zeros(n_art)])
    upper = np.concatenate([model.upper, slack_upper, np.full(n_art, np.inf)])
    x = np.concatenate([x_struct, np.zeros(m), np.zeros(n_art)])

    basis = np.arange(n, n + m)
    basis[needs_artificial] = n + m + np.arange(n_art)
    artificial = np.zeros(n + m + n_art, dtype=bool)
    artificial[n + m:] = True

    try:
        simplex = _BoundedSimplex(A_full, model.rhs.copy(), lower, upper, basis, x, max_iterations)
        if n_art:
            phase_one = artificial.astype(np.float64)
            outcome = simplex.run(phase_one)
            if outcome != "optimal":
                return LpSolution(LpStatus.NUMERICAL_FAILURE, None, np.nan, simplex.iterations,
                                  f"phase 1 ended with {outcome}")
            infeasibility = float(simplex.x[artificial].sum())
            if infeasibility > FEASIBILITY_TOL * max(1.0, float(np.max(np.abs(model.rhs), initial=0.0))):
                return LpSolution(LpStatus.INFEASIBLE, None, np.nan, simplex.iterations,
                                  f"phase 1 infeasibility {infeasibility:.3e}")
            simplex.drive_out(artificial)
            simplex.upper[artificial] = 0.0
            simplex.x[artificial & ~simplex.is_basic] = 0.0

        sign = 1.0 if model.sense == Sense.MIN else -1.0
        cost = np.concatenate([sign * model.c, np.zeros(m + n_art)])
        outcome = simplex.run(cost)
        if outcome == "unbounded":
            return LpSolution(LpStatus.UNBOUNDED, None, -sign * np.inf, simplex.iterations, "unbounded ray")
        if outcome != "optimal":
            return LpSolution(LpStatus.NUMERICAL_FAILURE, None, np.nan, simplex.iterations,
                              f"phase 2 ended with {outcome}")
        simplex.refactor()
    except _SingularBasis:
        return LpSolution(LpStatus.NUMERICAL_FAILURE, None, np.nan, 0, "singular basis")

    x_opt = simplex.x[:n].copy()
    if not _is_feasible(model, x_opt):
        logger.warning(f"LP solution fails the feasibility check (residual {model.residual(x_opt):.3e})")
        return LpSolution(LpStatus.NUMERICAL_FAILURE, None, np.nan, simplex.iterations, "residual check failed")
    return LpSolution(LpStatus.OPTIMAL, x_opt, model.objective_value(x_opt), simplex.iterations)


def _is_feasible(model: LpModel, x: np.ndarray) -> bool:
    """Row residuals within FEASIBILITY_TOL relative to the row's term magnitude."""
    activity = model.A @ x
    scale = np.maximum(1.0, np.maximum(np.abs(model.rhs), np.max(np.abs(model.A * x), axis=1, initial=0.0)))
    diff = activity - model.rhs
    codes = model.relation_codes()
    violation = np.where(codes < 0, diff, np.where(codes > 0, -diff, np.abs(diff)))
    if np.any(violation > FEASIBILITY_TOL * scale):
        return False
    bound_scale = np.maximum(1.0, np.abs(x))
    return bool(np.all(model.lower - x <= FEASIBILITY_TOL * bound_scale)
                and np.all(x - model.upper <= FEASIBILITY_TOL * bound_scale))


class LpBuilder:
    """
    Incremental construction of an ``LpModel`` from named variables and sparse rows.
    """

    def __init__(self):
        self.names: List[str] = []
        self.lower: List[float] = []
        self.upper: List[float] = []
        self.rows: List[Dict[int, float]] = []
        self.relations: List[Relation] = []
        self.rhs: List[float] = []

    @property
    def n_vars(self) -> int:
        return len(self.names)

    def add_variable(self, name: str, lower: float = -np.inf, upper: float = np.inf) -> int:
        self.names.append(name)
        self.lower.append(float(lower))
        self.upper.append(float(upper))
        return len(self.names) - 1

    def add_row(self, coeffs: Dict[int, float], relation: Relation, rhs: float) -> int:
        row = {j: float(v) for j, v in coeffs.items() if v != 0.0}
        self.rows.append(row)
        self.relations.append(Relation(relation))
        self.rhs.append(float(rhs))
        return len(self.rows) - 1

    def build(self, c: Optional[np.ndarray] = None, sense: Sense = Sense.MIN) -> LpModel:
        n = self.n_vars
        A = np.zeros((len(self.rows), n))
        for i, row in enumerate(self.rows):
            for j, v in row.items():
                A[i, j] += v
        c = np.zeros(n) if c is None else c
        return LpModel(c, A, tuple(self.relations), np.array(self.rhs), np.array(self.lower),
                       np.array(self.upper), sense, tuple(self.names))
