"""Command-line pipeline: simulate -> train -> evaluate -> report.

All costs are given in CPM cents and converted to dollars per auction once,
at parse time.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .domain import CostModel, UnsupportedLogError, ValidationError
from .evaluate import NeverAbort, NIReport, ReplayMode, replay
from .experiment import SWEEP_COSTS_CPM_CENTS, run_experiment
from .logio import LogParseError, atomic_write_text, read_log, write_log
from .report import histogram_csv, render_table
from .rule_simple import SimplePolicy, train_simple
from .simulator import SimConfig, generate, load_config
from .tree import TreeConfig, deserialize, grow

log = logging.getLogger("waterfall_abort")


class CliError(Exception):
    """Reported on stderr with exit code 1."""


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _cost(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")
    if not value >= 0 or value == float("inf"):
        raise argparse.ArgumentTypeError("cost must be a finite non-negative number")
    return value


def _u64(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def _run_config(args, exclude=("func",)) -> dict:
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items()) if k not in exclude}


def _load_json(path: Path):
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError(f"{path}: {exc.strerror or exc}")
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}")


def load_policy(spec: str):
    """``builtin:none`` or a path to a model JSON written by ``train``."""
    if spec == "builtin:none":
        return NeverAbort()
    if spec.startswith("builtin:"):
        raise CliError(f"unknown builtin model {spec!r} (known: builtin:none)")
    path = Path(spec)
    doc = _load_json(path)
    kind = doc.get("type") if isinstance(doc, dict) else None
    try:
        if kind == "simple":
            return SimplePolicy.from_dict(doc)
        if kind == "tree":
            return deserialize(doc)
    except ValidationError as exc:
        raise CliError(f"{path}: {exc}")
    raise CliError(f"{path}: $.type: unknown model type {kind!r}")


# -- subcommands ------------------------------------------------------------


def cmd_simulate(args) -> None:
    config = load_config(args.config) if args.config else SimConfig()
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    data = generate(config, args.day)
    if args.observed_only:
        data = data.observed_only()
    write_log(data, args.out)
    log.info("wrote %d requests / %d rows to %s", data.n_requests, data.n_rows, args.out)


def cmd_train(args) -> None:
    data = read_log(args.log)
    cost = CostModel.from_cpm_cents(args.cost_cpm_cents)
    if args.model == "simple":
        policy = train_simple(data, cost, reweight=args.reweight, bins=args.bins, min_support=args.min_support)
        doc = policy.to_dict()
    else:
        config = TreeConfig(
            cost=cost, t_node=args.t_node, t_adeni=args.t_adeni, max_depth=args.max_depth,
            max_thresholds=args.max_thresholds, reweight=args.reweight, bins=args.bins,
        )
        doc = grow(data, config).to_dict()
    doc["run_config"] = _run_config(args)
    atomic_write_text(args.out, _dump_json(doc))


def _publishers_path(report_path: Path) -> Path:
    return report_path.with_name(report_path.stem + ".publishers.csv")


def cmd_evaluate(args) -> None:
    data = read_log(args.log)
    policy = load_policy(args.model)
    cost = CostModel.from_cpm_cents(args.cost_cpm_cents)
    try:
        report = replay(data, policy, cost, ReplayMode(args.mode))
    except UnsupportedLogError as exc:
        raise CliError(f"{args.log}: {exc}")
    report.meta["run_config"] = _run_config(args)
    atomic_write_text(args.report, _dump_json(report.to_dict()))
    atomic_write_text(_publishers_path(args.report), report.publishers_csv())


def cmd_report(args) -> None:
    reports = []
    for path in args.reports:
        try:
            reports.append(NIReport.from_dict(_load_json(path)))
        except ValidationError as exc:
            raise CliError(f"{path}: {exc}")
    policies = [r for r in reports if r.policy != "none"] or reports
    if args.table:
        atomic_write_text(args.table, render_table(policies))
    else:
        sys.stdout.write(render_table(policies))
    if args.hist:
        atomic_write_text(args.hist, histogram_csv(policies, args.hist_bins))


def cmd_experiment(args) -> None:
    config = load_config(args.config) if args.config else SimConfig()
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)
    result = run_experiment(
        config, args.costs, mode=ReplayMode(args.mode),
        simple_options={"reweight": args.reweight, "bins": args.bins, "min_support": args.min_support},
        tree_options={"t_node": args.t_node, "t_adeni": args.t_adeni, "max_depth": args.max_depth,
                      "max_thresholds": args.max_thresholds, "reweight": args.reweight, "bins": args.bins},
    )
    reports = []
    for (kind, cc), report in sorted(result.reports.items()):
        report.meta["run_config"] = _run_config(args)
        report.meta["seed"] = config.seed
        name = f"{kind}_{cc:g}"
        atomic_write_text(out / f"{name}.report.json", _dump_json(report.to_dict()))
        atomic_write_text(out / f"{name}.publishers.csv", report.publishers_csv())
        if kind != "none":
            reports.append(report)
            atomic_write_text(out / f"{name}.model.json", _dump_json(result.policies[(kind, cc)].to_dict()))
    table = render_table(reports)
    atomic_write_text(out / "table.txt", table)
    atomic_write_text(out / "histograms.csv", histogram_csv(reports, args.hist_bins))
    sys.stdout.write(table)


# -- parser -------------------------------------------------------------------


def _add_simple_opts(p) -> None:
    p.add_argument("--reweight", action="store_true",
                   help="stratify win/lose differences by median-bid bins")
    p.add_argument("--bins", type=_positive_int, default=10, help="number of median-bid bins (default 10)")
    p.add_argument("--min-support", type=int, default=50,
                   help="tags with fewer observations are kept (simple model, default 50)")


def _add_tree_opts(p) -> None:
    p.add_argument("--t-node", type=int, default=1000, help="minimum node size to attempt a split (default 1000)")
    p.add_argument("--t-adeni", type=_cost, default=1e-7, help="minimum split gain in USD (default 1e-7)")
    p.add_argument("--max-depth", type=int, default=12, help="depth cap (default 12)")
    p.add_argument("--max-thresholds", type=_positive_int, default=32,
                   help="numeric threshold candidates per feature (default 32)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="waterfall-abort",
        description="Learn and evaluate auction-abort policies for ad waterfalls.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write a synthetic waterfall log for one day")
    p.add_argument("--config", type=Path, help="SimConfig file (.toml or .json); defaults if omitted")
    p.add_argument("--seed", type=_u64, help="override the config seed")
    p.add_argument("--day", type=int, choices=(1, 2), default=1, help="1 = train day, 2 = test day")
    p.add_argument("--out", type=Path, required=True, help="output CSV")
    p.add_argument("--observed-only", action="store_true",
                   help="drop unplayed rows and counterfactual columns (production-style log)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train an abort policy on a log")
    p.add_argument("--log", type=Path, required=True, help="training log CSV")
    p.add_argument("--model", choices=("simple", "tree"), required=True, help="policy kind")
    p.add_argument("--cost-cpm-cents", type=_cost, required=True, help="auction cost in CPM cents")
    _add_simple_opts(p)
    _add_tree_opts(p)
    p.add_argument("--out", type=Path, required=True, help="output model JSON")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="replay a log under a policy")
    p.add_argument("--log", type=Path, required=True, help="log CSV to replay")
    p.add_argument("--model", required=True, help="model JSON path or builtin:none")
    p.add_argument("--cost-cpm-cents", type=_cost, required=True, help="auction cost in CPM cents")
    p.add_argument("--mode", choices=[m.value for m in ReplayMode], default="conservative",
                   help="counterfactual treatment of aborted winners")
    p.add_argument("--report", type=Path, required=True,
                   help="output report JSON; per-publisher CSV is written next to it")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="render a cost-sweep table and histogram data")
    p.add_argument("--reports", type=Path, nargs="+", required=True, help="report JSON files")
    p.add_argument("--table", type=Path, help="output text table (stdout if omitted)")
    p.add_argument("--hist", type=Path, help="output histogram CSV")
    p.add_argument("--hist-bins", type=_positive_int, default=10, help="histogram bins (default 10)")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("experiment", help="simulate, train and evaluate a full cost sweep in memory")
    p.add_argument("--config", type=Path, help="SimConfig file (.toml or .json)")
    p.add_argument("--seed", type=_u64, help="override the config seed")
    p.add_argument("--costs", type=_cost, nargs="+", default=list(SWEEP_COSTS_CPM_CENTS),
                   help="auction costs in CPM cents")
    p.add_argument("--mode", choices=[m.value for m in ReplayMode], default="oracle",
                   help="counterfactual treatment of aborted winners (default oracle)")
    _add_simple_opts(p)
    _add_tree_opts(p)
    p.add_argument("--hist-bins", type=_positive_int, default=10, help="histogram bins (default 10)")
    p.add_argument("--out-dir", type=Path, required=True, help="directory for reports, models and table")
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except (CliError, LogParseError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc.filename}: no such file", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
