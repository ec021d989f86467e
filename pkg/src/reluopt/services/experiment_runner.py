"""
Experiment pipeline over a hyperparameter grid.

Each grid row trains (or reloads) a surrogate network and runs the enabled
stages train -> scale -> bounds -> obbt -> regions -> solve, persisting every
artifact under ``<out>/<config hash>/``. Existing artifacts are reused, so an
interrupted or repeated experiment only computes what is missing.
"""
import hashlib
import itertools
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.stats import gmean
from sqlalchemy.exc import SQLAlchemyError

from .. import BoundsRelationError, GridValidationError, __version__
from ..ai.trainer import GRID_CLIPS, GRID_DEPTHS, GRID_DROPOUT, GRID_L1, GRID_WIDTHS, TrainConfig, train
from ..config import MAX_REGIONS, TIME_LIMIT, database_url
from ..database.models import record_rows
from ..models import network as network_io
from ..models.network import ActivationKind, Network, ScalingFactors
from .benchmark_service import BenchmarkName, generate, get_benchmark
from .bound_tightening import obbt
from .bounds_engine import BoundsSet, Provenance, check_soundness, classify, ia_bounds, scaled_bounds_relation
from .branch_and_bound import solve_min
from .region_explorer import RegionAtlas, enumerate_regions
from .region_plot import render_svg
from .scaling_optimizer import EQUIVALENCE_TOLERANCE, check_equivalence, check_points, scale_network

logger = logging.getLogger(__name__)

STAGES = ("train", "scale", "bounds", "obbt", "regions", "solve")

# Bound sets per row: tag -> (provenance, uses the scaled network)
BOUND_TAGS = {
    "ia": (Provenance.IA, False),
    "obbt": (Provenance.OBBT, False),
    "scaled_ia": (Provenance.SCALED_IA, True),
    "scaled_obbt": (Provenance.SCALED_OBBT, True),
}

GRID_KEYS = ("benchmark", "hidden_layers", "width", "clip", "l1", "dropout", "seed")

PARTITION_TOLERANCE = 1e-6


@dataclass
class ExperimentSpec:
    benchmark: str = BenchmarkName.PEAKS.value
    depths: Tuple[int, ...] = (1, 2, 3, 4, 5)
    widths: Tuple[int, ...] = (25,)
    clips: Tuple[Optional[float], ...] = (None,)
    l1: Tuple[float, ...] = (0.0, 1e-5, 1e-4)
    dropout: Tuple[float, ...] = (0.0, 0.2)
    seeds: Tuple[int, ...] = (0, 1)
    epochs: int = 300
    batch_size: int = 256
    n_samples: Optional[int] = None
    scale: bool = True
    obbt: bool = True
    regions: bool = True
    solve: bool = True
    time_limit: float = TIME_LIMIT
    max_regions: int = MAX_REGIONS
    workers: int = 1
    unsafe_grid: bool = False

    def __post_init__(self):
        for name in ("depths", "widths", "clips", "l1", "dropout", "seeds"):
            setattr(self, name, tuple(getattr(self, name)))
        get_benchmark(self.benchmark)
        if self.time_limit <= 0:
            raise GridValidationError(f"time limit must be positive, got {self.time_limit}")
        if not self.unsafe_grid:
            self.validate()

    def validate(self) -> None:
        """Check every grid value against the training vocabulary."""
        vocabulary = {
            "depths": GRID_DEPTHS,
            "widths": GRID_WIDTHS,
            "clips": GRID_CLIPS + (None,),
            "l1": GRID_L1,
            "dropout": GRID_DROPOUT,
        }
        for name, allowed in vocabulary.items():
            outside = [v for v in getattr(self, name) if v not in allowed]
            if outside:
                raise GridValidationError(
                    f"{name} values {outside} are outside the grid vocabulary {list(allowed)}; "
                    "use --unsafe-grid to allow them"
                )
        for name in ("depths", "widths", "clips", "l1", "dropout", "seeds"):
            if not getattr(self, name):
                raise GridValidationError(f"{name} must not be empty")

    def rows(self) -> List[Dict]:
        """Grid rows in a fixed order."""
        rows = []
        for depth, width, clip, l1, dropout, seed in itertools.product(
            self.depths, self.widths, self.clips, self.l1, self.dropout, self.seeds
        ):
            rows.append({
                "benchmark": self.benchmark,
                "hidden_layers": int(depth),
                "width": int(width),
                "clip": None if clip is None else float(clip),
                "l1": float(l1),
                "dropout": float(dropout),
                "seed": int(seed),
                "epochs": self.epochs,
                "batch_size": self.batch_size,
                "n_samples": self.n_samples,
            })
        return rows

    def stage_options(self) -> Dict:
        return {
            "scale": self.scale,
            "obbt": self.obbt,
            "regions": self.regions,
            "solve": self.solve,
            "time_limit": self.time_limit,
            "max_regions": self.max_regions,
        }

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict) -> "ExperimentSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise GridValidationError(f"unknown experiment fields: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ExperimentSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


def config_hash(row: Dict) -> str:
    """Stable hash of a canonicalized grid row."""
    canonical = json.dumps(row, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def json_safe(value):
    """Replace non-finite floats with None and numpy scalars with Python ones."""
    if isinstance(value, dict):
        return {k: json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [json_safe(v) for v in value]
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def _write_json(path: Path, data: Dict) -> None:
    path.write_text(json.dumps(json_safe(data), indent=1, sort_keys=True, allow_nan=False))


def _read_json(path: Path) -> Dict:
    return json.loads(path.read_text())


def _activation(row: Dict) -> ActivationKind:
    return ActivationKind.relu() if row["clip"] is None else ActivationKind.clipped(row["clip"])


def _empty_result(row: Dict, digest: str) -> Dict:
    result = {"config_hash": digest, **{k: row[k] for k in GRID_KEYS}}
    result.update({
        "activation": str(_activation(row)),
        "version": __version__,
        "test_mape": math.nan,
        "test_rmse": math.nan,
        "region_count": math.nan,
        "l1_before": math.nan,
        "l1_after": math.nan,
    })
    for tag in BOUND_TAGS:
        result.update({
            f"width_{tag}": math.nan,
            f"stable_{tag}": math.nan,
            f"solve_status_{tag}": None,
            f"solve_time_{tag}": math.nan,
            f"solve_objective_{tag}": math.nan,
            f"solve_nodes_{tag}": math.nan,
        })
    result["config"] = dict(row)
    result["stages"] = {stage: "skipped" for stage in STAGES}
    result["errors"] = {}
    return result


STATUS_RANK = {"skipped": 0, "cached": 1, "ok": 2, "failed": 3}


def _merge_status(previous: Optional[str], status: str) -> str:
    """Stages that run several times (one per bound tag) keep their worst status."""
    if previous is None:
        return status
    return max(previous, status, key=STATUS_RANK.__getitem__)


def _stage(result: Dict, name: str, action: Callable[[], bool]) -> bool:
    """Run one stage; ``action`` returns True when it reused cached artifacts."""
    previous = result["stages"].get(name)
    if previous == "skipped":
        previous = None
    try:
        cached = action()
    except Exception as e:
        logger.error(f"Error in stage {name} for {result['config_hash']}: {e}")
        result["stages"][name] = "failed"
        errors = result["errors"]
        message = f"{type(e).__name__}: {e}"
        errors[name] = f"{errors[name]}; {message}" if name in errors else message
        return False
    result["stages"][name] = _merge_status(previous, "cached" if cached else "ok")
    return True


def run_row(row: Dict, out_dir: Union[str, Path], options: Dict) -> Dict:
    """
    Run the pipeline for one grid row.

    Args:
        row: Grid row from ``ExperimentSpec.rows``
        out_dir: Experiment output directory
        options: Stage toggles and limits from ``ExperimentSpec.stage_options``

    Returns:
        Report row; failed stages are listed under ``errors``
    """
    digest = config_hash(row)
    row_dir = Path(out_dir) / digest
    row_dir.mkdir(parents=True, exist_ok=True)
    _write_json(row_dir / "config.json", row)
    result = _empty_result(row, digest)
    state: Dict = {}

    def train_stage() -> bool:
        net_path, report_path = row_dir / "network.json", row_dir / "train_report.json"
        cached = net_path.exists() and report_path.exists()
        if cached:
            state["net"] = network_io.load(net_path)
            report = _read_json(report_path)
        else:
            data = generate(get_benchmark(row["benchmark"]), row["n_samples"], seed=row["seed"])
            config = TrainConfig(
                hidden_layers=row["hidden_layers"],
                width=row["width"],
                activation=_activation(row),
                l1=row["l1"],
                dropout_rate=row["dropout"],
                epochs=row["epochs"],
                batch_size=row["batch_size"],
                seed=row["seed"],
            )
            state["net"], train_report = train(data, config)
            report = train_report.to_dict()
            network_io.save(state["net"], net_path)
            _write_json(report_path, report)
        result["test_mape"] = report["test_mape"]
        result["test_rmse"] = report["test_rmse"]
        return cached

    if not _stage(result, "train", train_stage):
        return result
    net: Network = state["net"]
    networks = {False: net}

    def scale_stage() -> bool:
        net_path, report_path = row_dir / "scaled_network.json", row_dir / "scaling.json"
        cached = net_path.exists() and report_path.exists()
        if cached:
            networks[True] = network_io.load(net_path)
            report = _read_json(report_path)
        else:
            networks[True], solution = scale_network(net)
            report = solution.to_dict()
            network_io.save(networks[True], net_path)
            _write_json(report_path, report)
        result["l1_before"] = report["objective_before"]
        result["l1_after"] = report["objective_after"]
        return cached

    if options["scale"] and net.is_relu:
        _stage(result, "scale", scale_stage)

    bounds: Dict[str, BoundsSet] = {}

    def bounds_stage(tag: str) -> Callable[[], bool]:
        provenance, scaled = BOUND_TAGS[tag]

        def action() -> bool:
            path = row_dir / f"bounds-{tag}.json"
            cached = path.exists()
            if cached:
                bounds[tag] = BoundsSet.load(path)
            elif provenance.value.endswith("OBBT"):
                source = bounds["scaled_ia" if scaled else "ia"]
                report = obbt(networks[scaled], source)
                bounds[tag] = report.bounds
                bounds[tag].save(path)
                _write_json(row_dir / f"obbt-{tag}.json", report.to_dict())
            else:
                bounds[tag] = ia_bounds(networks[scaled], provenance=provenance)
                bounds[tag].save(path)
            summary = classify(bounds[tag])
            result[f"width_{tag}"] = bounds[tag].mean_hidden_width()
            result[f"stable_{tag}"] = summary.stable_percentage
            return cached

        return action

    ia_tags = [tag for tag in ("ia", "scaled_ia") if BOUND_TAGS[tag][1] in networks]
    if all([_stage(result, "bounds", bounds_stage(tag)) for tag in ia_tags]) and options["obbt"]:
        for tag in ("obbt", "scaled_obbt"):
            if BOUND_TAGS[tag][1] in networks:
                _stage(result, "obbt", bounds_stage(tag))

    def regions_stage() -> bool:
        atlas_path, svg_path = row_dir / "atlas.json", row_dir / "regions.svg"
        cached = atlas_path.exists() and svg_path.exists()
        if cached:
            stats = _read_json(atlas_path)["stats"]
        else:
            atlas = enumerate_regions(net, options["max_regions"])
            atlas.save(atlas_path)
            render_svg(atlas, background=net, path=svg_path)
            stats = atlas.stats()
        result["region_count"] = stats["region_count"]
        return cached

    if options["regions"] and net.is_relu and net.n_inputs == 2:
        _stage(result, "regions", regions_stage)

    def solve_stage(tag: str) -> Callable[[], bool]:
        def action() -> bool:
            path = row_dir / f"solve-{tag}.json"
            outcome = _read_json(path) if path.exists() else None
            # A solve is only reused under the time limit it ran with
            cached = outcome is not None and outcome.get("time_limit") == options["time_limit"]
            if not cached:
                outcome = solve_min(networks[BOUND_TAGS[tag][1]], bounds[tag], options["time_limit"]).to_dict()
                outcome["time_limit"] = options["time_limit"]
                _write_json(path, outcome)
            result[f"solve_status_{tag}"] = outcome["status"]
            result[f"solve_time_{tag}"] = outcome["wall_time"]
            result[f"solve_objective_{tag}"] = math.nan if outcome["objective"] is None else outcome["objective"]
            result[f"solve_nodes_{tag}"] = outcome["nodes"]
            return cached

        return action

    if options["solve"]:
        for tag in BOUND_TAGS:
            if tag in bounds:
                _stage(result, "solve", solve_stage(tag))

    return result


# Aggregation ---------------------------------------------------------------


def geometric_mean(values: Sequence[float]) -> Tuple[Optional[float], int]:
    """Geometric mean over the finite, strictly positive values; (None, 0) when there are none."""
    kept = [v for v in values if v is not None and math.isfinite(v) and v > 0]
    if not kept:
        return None, 0
    return float(gmean(kept)), len(kept)


def _arithmetic_mean(values: Sequence[float]) -> Tuple[Optional[float], int]:
    kept = [v for v in values if v is not None and math.isfinite(v)]
    if not kept:
        return None, 0
    return float(np.mean(kept)), len(kept)


def _ratio(numerator, denominator) -> float:
    if numerator is None or denominator is None:
        return math.nan
    if not (math.isfinite(numerator) and math.isfinite(denominator)) or denominator == 0:
        return math.nan
    return numerator / denominator


def _solved(row: Dict, tag: str) -> bool:
    return row.get(f"solve_status_{tag}") == "optimal"


def aggregate(pairs: Sequence[Tuple[Dict, Dict]], control: str = "ia", treated: str = "ia") -> Dict:
    """
    Summarize paired rows the way the comparison tables do.

    Args:
        pairs: (control row, treated row) pairs; a row may pair with itself
        control: Bound tag read from the control row
        treated: Bound tag read from the treated row

    Returns:
        Geometric-mean width, region and time ratios, the mean stable-fraction
        delta (fraction units), and solved-instance counts per arm. Every
        statistic carries its sample size; an empty sample is ``None`` with n = 0.
    """
    width, width_n = geometric_mean([_ratio(t[f"width_{treated}"], c[f"width_{control}"]) for c, t in pairs])
    regions, regions_n = geometric_mean([_ratio(t["region_count"], c["region_count"]) for c, t in pairs])
    stable, stable_n = _arithmetic_mean([t[f"stable_{treated}"] - c[f"stable_{control}"] for c, t in pairs])
    both = [(c, t) for c, t in pairs if _solved(c, control) and _solved(t, treated)]
    time, time_n = geometric_mean([_ratio(t[f"solve_time_{treated}"], c[f"solve_time_{control}"]) for c, t in both])
    return {
        "n_pairs": len(pairs),
        "width_ratio": width,
        "width_n": width_n,
        "stable_delta": stable,
        "stable_n": stable_n,
        "region_ratio": regions,
        "region_n": regions_n,
        "time_ratio": time,
        "time_n": time_n,
        "solved_control": sum(_solved(c, control) for c, _ in pairs),
        "solved_treated": sum(_solved(t, treated) for _, t in pairs),
    }


def pair_rows(rows: Sequence[Dict], dimension: str, control_value, treated_value) -> List[Tuple[Dict, Dict]]:
    """Pair rows that differ only in ``dimension``."""
    others = [k for k in GRID_KEYS if k != dimension]
    controls = {tuple(r[k] for k in others): r for r in rows if r[dimension] == control_value}
    pairs = []
    for row in rows:
        if row[dimension] == treated_value:
            match = controls.get(tuple(row[k] for k in others))
            if match is not None:
                pairs.append((match, row))
    return pairs


def _by_depth(pairs: Sequence[Tuple[Dict, Dict]], control: str, treated: str) -> Dict:
    depths = sorted({c["hidden_layers"] for c, _ in pairs})
    return {
        str(depth): aggregate([(c, t) for c, t in pairs if c["hidden_layers"] == depth], control, treated)
        for depth in depths
    }


def treatment_blocks(rows: Sequence[Dict]) -> Dict:
    """
    All comparison blocks for a set of report rows.

    Within-row blocks compare bound provenances of the same network; grid
    blocks compare each non-default value of l1, dropout and clipping against
    the default (0, 0, plain ReLU) with everything else held fixed.
    """
    rows = [r for r in rows if r["stages"].get("train") in ("ok", "cached")]
    blocks = {}
    same = [(r, r) for r in rows]
    for name, control, treated in (
        ("obbt_vs_ia", "ia", "obbt"),
        ("scaled_vs_unscaled", "ia", "scaled_ia"),
        ("scaled_obbt_vs_ia", "ia", "scaled_obbt"),
        ("scaled_obbt_vs_obbt", "obbt", "scaled_obbt"),
    ):
        blocks[name] = aggregate(same, control, treated)
        blocks[name]["by_depth"] = _by_depth(same, control, treated)

    for dimension, control_value, label in (("l1", 0.0, "0"), ("dropout", 0.0, "0"), ("clip", None, "relu")):
        values = sorted({r[dimension] for r in rows if r[dimension] != control_value}, key=lambda v: (v is None, v))
        for value in values:
            pairs = pair_rows(rows, dimension, control_value, value)
            name = f"{dimension}={value:g}_vs_{label}"
            blocks[name] = aggregate(pairs)
            blocks[name]["by_depth"] = _by_depth(pairs, "ia", "ia")
    return blocks


# Reporting -----------------------------------------------------------------


REPORT_COLUMNS = (
    ["config_hash", *GRID_KEYS, "activation", "version", "test_mape", "test_rmse", "region_count",
     "l1_before", "l1_after"]
    + [f"{metric}_{tag}" for tag in BOUND_TAGS for metric in ("width", "stable")]
    + [f"{metric}_{tag}" for tag in BOUND_TAGS
       for metric in ("solve_status", "solve_time", "solve_objective", "solve_nodes")]
    + [f"stage_{stage}" for stage in STAGES]
    + ["errors"]
)


def _flat(row: Dict) -> Dict:
    flat = {k: row.get(k) for k in REPORT_COLUMNS if not k.startswith("stage_") and k != "errors"}
    # Reused artifacts report as "ok" so a cached rerun writes the same CSV
    for stage in STAGES:
        status = row["stages"].get(stage)
        flat[f"stage_{stage}"] = "ok" if status == "cached" else status
    flat["errors"] = "; ".join(f"{k}: {v}" for k, v in sorted(row["errors"].items())) or None
    return flat


@dataclass
class ExperimentReport:
    rows: List[Dict]
    aggregate: Dict = field(default_factory=dict)
    spec: Optional[Dict] = None

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame([_flat(r) for r in self.rows], columns=REPORT_COLUMNS)

    @property
    def failed_rows(self) -> int:
        return sum(1 for r in self.rows if r["errors"])

    def to_dict(self) -> Dict:
        return json_safe({"version": __version__, "spec": self.spec, "rows": self.rows,
                          "aggregate": self.aggregate})

    def save(self, out_dir: Union[str, Path]) -> Tuple[Path, Path]:
        """Write report.csv and report.json; both carry the same values."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        csv_path, json_path = out_dir / "report.csv", out_dir / "report.json"
        self.frame().to_csv(csv_path, index=False, float_format="%.17g")
        json_path.write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True, allow_nan=False))
        logger.info(f"Wrote report to {csv_path} and {json_path}")
        return csv_path, json_path

    @classmethod
    def load(cls, out_dir: Union[str, Path]) -> "ExperimentReport":
        data = json.loads((Path(out_dir) / "report.json").read_text())
        rows = []
        for row in data["rows"]:
            rows.append({k: (math.nan if v is None and not k.startswith("solve_status") and k != "clip" else v)
                         for k, v in row.items()})
        return cls(rows, data.get("aggregate", {}), data.get("spec"))


def run_experiment(spec: ExperimentSpec, out_dir: Union[str, Path], registry_url: Optional[str] = None) -> ExperimentReport:
    """
    Run every grid row and assemble the report.

    Args:
        spec: Validated experiment specification
        out_dir: Output directory for artifacts and the report
        registry_url: SQLAlchemy URL of the run registry (defaults to the output directory)

    Returns:
        ExperimentReport with per-row results and the comparison blocks
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = spec.rows()
    options = spec.stage_options()
    logger.info(f"Running {len(rows)} grid rows with {spec.workers} workers into {out_dir}")

    results = Parallel(n_jobs=spec.workers)(delayed(run_row)(row, str(out_dir), options) for row in rows)

    report = ExperimentReport(list(results), treatment_blocks(results), json_safe(spec.to_dict()))
    report.save(out_dir)
    try:
        written = record_rows(registry_url or database_url(out_dir), report.rows, __version__)
        logger.info(f"Registered {written} runs")
    except SQLAlchemyError as e:
        logger.error(f"Error writing run registry: {e}")
    if report.failed_rows:
        logger.warning(f"{report.failed_rows} of {len(rows)} rows had stage failures")
    return report


def rebuild_report(out_dir: Union[str, Path]) -> ExperimentReport:
    """Recompute the comparison blocks from a stored report and rewrite it."""
    report = ExperimentReport.load(out_dir)
    report.aggregate = treatment_blocks(report.rows)
    report.save(out_dir)
    return report


# Verification --------------------------------------------------------------


@dataclass
class VerificationReport:
    checks: List[Dict] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks)

    @property
    def failures(self) -> List[Dict]:
        return [c for c in self.checks if not c["passed"]]

    def add(self, digest: str, check: str, passed: bool, detail: str = "") -> None:
        self.checks.append({"config_hash": digest, "check": check, "passed": bool(passed), "detail": detail})

    def to_dict(self) -> Dict:
        return {"passed": self.passed, "checks": self.checks}


def _verify_row(row_dir: Path, report: VerificationReport, n_samples: int) -> None:
    digest = row_dir.name
    net = network_io.load(row_dir / "network.json")
    scaled_path = row_dir / "scaled_network.json"
    scaled = network_io.load(scaled_path) if scaled_path.exists() else None

    for tag, (_, uses_scaled) in BOUND_TAGS.items():
        path = row_dir / f"bounds-{tag}.json"
        if not path.exists():
            continue
        bounds = BoundsSet.load(path)
        target = scaled if uses_scaled else net
        if target is None:
            report.add(digest, f"soundness:{tag}", False, "scaled network missing")
            continue
        outcome = check_soundness(target, bounds, n_samples=n_samples)
        report.add(digest, f"soundness:{tag}", outcome["violations"] == 0,
                   f"{outcome['violations']} violations, max excess {outcome['max_excess']:.3e}")

    if scaled is not None:
        deviation, point = check_equivalence(net, scaled, check_points(net))
        report.add(digest, "scaling:equivalence", deviation <= EQUIVALENCE_TOLERANCE,
                   f"max deviation {deviation:.3e} at {point.tolist()}")
        scaling_path = row_dir / "scaling.json"
        if scaling_path.exists():
            factors = ScalingFactors(tuple(np.array(c) for c in _read_json(scaling_path)["factors"]))
            try:
                record = scaled_bounds_relation(net, factors)
                report.add(digest, "scaling:bounds_relation", True, f"max deviation {record.max_deviation:.3e}")
            except BoundsRelationError as e:
                report.add(digest, "scaling:bounds_relation", False, str(e))

    atlas_path = row_dir / "atlas.json"
    if atlas_path.exists():
        atlas = RegionAtlas.load(atlas_path, net.n_hidden)
        if atlas.incomplete:
            report.add(digest, "regions:partition", True, "incomplete atlas, partition not checked")
        else:
            error = atlas.partition_error()
            report.add(digest, "regions:partition", error <= PARTITION_TOLERANCE, f"relative error {error:.3e}")


def verify(out_dir: Union[str, Path], n_samples: int = 10_000) -> VerificationReport:
    """
    Replay the stored artifacts' invariants: bound soundness by sampling,
    scaling equivalence and bound relation, and atlas area partition.
    """
    report = VerificationReport()
    row_dirs = sorted(p.parent for p in Path(out_dir).glob("*/network.json"))
    if not row_dirs:
        logger.warning(f"No network artifacts found under {out_dir}")
    for row_dir in row_dirs:
        try:
            _verify_row(row_dir, report, n_samples)
        except Exception as e:
            logger.error(f"Error verifying {row_dir.name}: {e}")
            report.add(row_dir.name, "artifacts:readable", False, str(e))
    logger.info(f"Verified {len(row_dirs)} rows: {len(report.failures)} failed checks")
    return report
