"""
Command-line interface.

Exit codes: 0 success, 1 usage error, 2 stage failure, 3 verification failure.
"""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional

from . import GridValidationError, ReluOptError, __version__
from . import config
from .models import network as network_io
from .models.network import ActivationKind

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_STAGE_FAILURE = 2
EXIT_VERIFICATION_FAILURE = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that reports usage errors with exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _emit(data: Dict) -> None:
    from .services.experiment_runner import json_safe

    print(json.dumps(json_safe(data), indent=1, sort_keys=True))


def _write_json(path: Path, data: Dict) -> None:
    from .services.experiment_runner import json_safe

    path.write_text(json.dumps(json_safe(data), indent=1, sort_keys=True, allow_nan=False))


def _out_dir(args) -> Path:
    out = config.resolve_output_dir(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_network(path: str):
    if not Path(path).exists():
        raise UsageError(f"network file {path} does not exist")
    return network_io.load(path)


def _load_bounds(path: Optional[str], net):
    from .services.bounds_engine import BoundsSet, ia_bounds

    if path is None:
        return ia_bounds(net)
    if not Path(path).exists():
        raise UsageError(f"bounds file {path} does not exist")
    return BoundsSet.load(path)


# Subcommands ---------------------------------------------------------------


def cmd_train(args) -> int:
    from .ai.trainer import TrainConfig, train
    from .services.benchmark_service import generate, get_benchmark

    activation = ActivationKind.relu() if args.clip is None else ActivationKind.clipped(args.clip)
    train_config = TrainConfig(
        hidden_layers=args.layers,
        width=args.width,
        activation=activation,
        l1=args.l1,
        dropout_rate=args.dropout,
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=args.seed,
    )
    data = generate(get_benchmark(args.benchmark), args.samples, seed=args.seed)
    out = _out_dir(args)
    if args.dataset_csv:
        data.to_csv(out / "dataset.csv")
    net, report = train(data, train_config)
    network_io.save(net, out / "network.json")
    _write_json(out / "train_report.json", report.to_dict())
    _emit({"network": str(out / "network.json"), "test_mape": report.test_mape, "test_rmse": report.test_rmse})
    return EXIT_OK


def cmd_scale(args) -> int:
    from .services.scaling_optimizer import scale_network

    net = _load_network(args.network)
    scaled, solution = scale_network(net)
    out = _out_dir(args)
    network_io.save(scaled, out / "scaled_network.json")
    _write_json(out / "scaling.json", solution.to_dict())
    _emit({k: v for k, v in solution.to_dict().items() if k != "factors"})
    return EXIT_OK


def cmd_bounds(args) -> int:
    from .services.bounds_engine import Provenance, check_soundness, classify, ia_bounds, scaled_bounds_relation
    from .models.network import ScalingFactors

    net = _load_network(args.network)
    provenance = Provenance.SCALED_IA if args.scaled else Provenance.IA
    bounds = ia_bounds(net, provenance=provenance)
    out = _out_dir(args)
    tag = "scaled_ia" if args.scaled else "ia"
    bounds.save(out / f"bounds-{tag}.json")
    summary = {
        "bounds": str(out / f"bounds-{tag}.json"),
        "stable_percentage": classify(bounds).stable_percentage,
        "mean_hidden_width": bounds.mean_hidden_width(),
        "width_profile": bounds.width_profile(),
    }
    if args.soundness:
        summary["soundness"] = check_soundness(net, bounds, n_samples=args.soundness, seed=args.seed)
    if args.scaling:
        factors = json.loads(Path(args.scaling).read_text())["factors"]
        record = scaled_bounds_relation(net, ScalingFactors(tuple(factors)))
        summary["scaled_relation_deviation"] = record.max_deviation
    _emit(summary)
    if summary.get("soundness", {}).get("violations"):
        return EXIT_VERIFICATION_FAILURE
    return EXIT_OK


def cmd_obbt(args) -> int:
    from .services.bound_tightening import obbt

    net = _load_network(args.network)
    bounds = _load_bounds(args.bounds, net)
    report = obbt(net, bounds, time_budget=args.time_budget, passes=args.passes, parallel=args.parallel)
    out = _out_dir(args)
    tag = report.bounds.provenance.value.lower().replace("+", "_")
    report.bounds.save(out / f"bounds-{tag}.json")
    _emit(report.to_dict())
    return EXIT_OK


def cmd_regions(args) -> int:
    from .services.region_explorer import enumerate_regions
    from .services.region_plot import render_svg

    net = _load_network(args.network)
    atlas = enumerate_regions(net, args.max_regions)
    out = _out_dir(args)
    atlas.save(out / "atlas.json")
    if not args.no_svg:
        render_svg(atlas, background=net, path=out / "regions.svg")
    _emit(atlas.stats())
    return EXIT_OK


def cmd_solve(args) -> int:
    from .services.branch_and_bound import solve_min

    net = _load_network(args.network)
    bounds = _load_bounds(args.bounds, net)
    result = solve_min(net, bounds, args.time_limit, args.coefficients, workers=args.threads)
    out = _out_dir(args)
    _write_json(out / "solve.json", result.to_dict())
    if args.trace:
        result.write_trace(out / "solve-trace.csv")
    _emit(result.to_dict())
    return EXIT_OK


def cmd_adversarial(args) -> int:
    from .services.branch_and_bound import solve_adversarial

    net = _load_network(args.network)
    if len(args.x0) != net.n_inputs:
        raise UsageError(f"--x0 needs {net.n_inputs} values, got {len(args.x0)}")
    try:
        result = solve_adversarial(net, args.x0, args.delta, args.target, args.true_label,
                                   args.time_limit, workers=args.threads)
    except ValueError as e:
        raise UsageError(str(e)) from e
    out = _out_dir(args)
    _write_json(out / "adversarial.json", result.to_dict())
    summary = result.to_dict()
    if result.solved:
        summary["adversarial"] = result.objective > 0
    _emit(summary)
    return EXIT_OK


def _experiment_spec(args):
    from .services.experiment_runner import ExperimentSpec

    if args.spec:
        data = json.loads(Path(args.spec).read_text())
    else:
        data = {}
        for name in ("benchmark", "depths", "widths", "l1", "dropout", "seeds", "epochs", "n_samples"):
            value = getattr(args, name)
            if value is not None:
                data[name] = value
        if args.clips is not None:
            data["clips"] = [None if c <= 0 else c for c in args.clips]
    for stage in ("scale", "obbt", "regions", "solve"):
        if getattr(args, f"no_{stage}"):
            data[stage] = False
    data["time_limit"] = args.time_limit
    data["max_regions"] = args.max_regions
    data["workers"] = args.threads
    data["unsafe_grid"] = args.unsafe_grid or data.get("unsafe_grid", False)
    return ExperimentSpec.from_dict(data)


def cmd_experiment(args) -> int:
    from .services.experiment_runner import run_experiment

    spec = _experiment_spec(args)
    report = run_experiment(spec, _out_dir(args))
    _emit({"rows": len(report.rows), "failed_rows": report.failed_rows, "aggregate": report.aggregate})
    return EXIT_STAGE_FAILURE if report.failed_rows else EXIT_OK


def cmd_verify(args) -> int:
    from .services.experiment_runner import verify

    report = verify(_out_dir(args), n_samples=args.samples)
    _emit({"passed": report.passed, "checks": len(report.checks), "failures": report.failures})
    return EXIT_OK if report.passed else EXIT_VERIFICATION_FAILURE


def cmd_report(args) -> int:
    from .services.experiment_runner import rebuild_report

    out = _out_dir(args)
    if not (out / "report.json").exists():
        raise UsageError(f"no report.json in {out}; run the experiment first")
    report = rebuild_report(out)
    _emit(report.aggregate)
    return EXIT_OK


# Parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="reluopt", description="Big-M encodings, bounds and global optimization of ReLU networks",
                     formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--seed", type=int, default=0, help="random seed")
    parser.add_argument("--time-limit", type=float, default=config.TIME_LIMIT, help="seconds per MILP solve")
    parser.add_argument("--threads", type=int, default=config.THREADS, help="worker count")
    parser.add_argument("--out", default=None, help="output directory (RELUOPT_OUT takes precedence)")
    parser.add_argument("--unsafe-grid", action="store_true", help="allow values outside the training grid")
    parser.add_argument("--max-regions", type=int, default=config.MAX_REGIONS, help="region enumeration cap")
    parser.add_argument("--log-level", default=config.LOG_LEVEL, help="logging level")

    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a surrogate network on a benchmark function")
    p.add_argument("--benchmark", default="peaks", choices=["peaks", "ackley", "himmelblau"])
    p.add_argument("--layers", type=int, default=2, help="number of hidden layers")
    p.add_argument("--width", type=int, default=25)
    p.add_argument("--clip", type=float, default=None, help="clipped ReLU bound M (plain ReLU when omitted)")
    p.add_argument("--l1", type=float, default=0.0, help="l1 regularization coefficient")
    p.add_argument("--dropout", type=float, default=0.0)
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--samples", type=int, default=None, help="data set size (benchmark default when omitted)")
    p.add_argument("--dataset-csv", action="store_true", help="also export the data set as CSV")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("scale", help="rescale a ReLU network to minimal l1 norm")
    p.add_argument("network")
    p.set_defaults(func=cmd_scale)

    p = sub.add_parser("bounds", help="interval-arithmetic pre-activation bounds")
    p.add_argument("network")
    p.add_argument("--scaled", action="store_true", help="label the bounds as computed on a scaled network")
    p.add_argument("--soundness", type=int, default=0, help="sample count for a soundness check")
    p.add_argument("--scaling", default=None, help="scaling.json to check the scaled-bounds relation against")
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("obbt", help="LP-based bound tightening")
    p.add_argument("network")
    p.add_argument("--bounds", default=None, help="starting bounds (IA when omitted)")
    p.add_argument("--time-budget", type=float, default=None)
    p.add_argument("--passes", type=int, default=1)
    p.add_argument("--parallel", action="store_true", help="solve each neuron's LP pair concurrently")
    p.set_defaults(func=cmd_obbt)

    p = sub.add_parser("regions", help="enumerate linear regions of a 2-input ReLU network")
    p.add_argument("network")
    p.add_argument("--no-svg", action="store_true")
    p.set_defaults(func=cmd_regions)

    p = sub.add_parser("solve", help="globally minimize the network output")
    p.add_argument("network")
    p.add_argument("--bounds", default=None, help="big-M bounds (IA when omitted)")
    p.add_argument("--coefficients", type=float, nargs="+", default=None, help="weights on the outputs")
    p.add_argument("--trace", action="store_true", help="write the per-node trace CSV")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("adversarial", help="maximize h_target - h_true over an l-infinity ball")
    p.add_argument("network")
    p.add_argument("--x0", type=float, nargs="+", required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--target", type=int, required=True, help="0-based incorrect label")
    p.add_argument("--true-label", type=int, required=True, help="0-based correct label")
    p.set_defaults(func=cmd_adversarial)

    p = sub.add_parser("experiment", help="run the pipeline over a hyperparameter grid")
    p.add_argument("--spec", default=None, help="experiment specification JSON")
    p.add_argument("--benchmark", default=None, choices=["peaks", "ackley", "himmelblau"])
    p.add_argument("--depths", type=int, nargs="+", default=None)
    p.add_argument("--widths", type=int, nargs="+", default=None)
    p.add_argument("--clips", type=float, nargs="+", default=None, help="clip values; 0 means plain ReLU")
    p.add_argument("--l1", type=float, nargs="+", default=None)
    p.add_argument("--dropout", type=float, nargs="+", default=None)
    p.add_argument("--seeds", type=int, nargs="+", default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--samples", dest="n_samples", type=int, default=None)
    for stage in ("scale", "obbt", "regions", "solve"):
        p.add_argument(f"--no-{stage}", action="store_true", help=f"skip the {stage} stage")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("verify", help="re-check stored artifacts")
    p.add_argument("--samples", type=int, default=10_000, help="samples per soundness check")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("report", help="recompute the comparison blocks of a stored report")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, GridValidationError) as e:
        logger.error(f"Usage error: {e}")
        return EXIT_USAGE
    except ReluOptError as e:
        logger.error(f"Error in {args.command}: {e}")
        return EXIT_STAGE_FAILURE
    except ValueError as e:
        logger.error(f"Invalid argument: {e}")
        return EXIT_USAGE
