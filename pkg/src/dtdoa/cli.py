"""Command-line interface: simulate, estimate, eval and sweep.

Exit codes: 0 success, 1 usage or configuration error, 2 data error
(unreadable or inconsistent input files), 3 estimation failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .dataio import DataError, load, node_table_from_scenario, save_nodes
from .evaluate import (
    RunConfig,
    estimate_from_log,
    run_experiment,
    summary_dict,
    write_report,
)
from .ranging import EstimationError
from .simulate import (
    ScenarioError,
    UnwrapError,
    load_scenario,
    scenario_from_json,
    unwrap_timestamps,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_ESTIMATION = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _parse_channels(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(tok) for tok in text.split(",") if tok.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad channel list {text!r}")


def _add_method_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--method", choices=("oneshot", "snp"), default="oneshot")
    parser.add_argument("--solver", choices=("hyp", "ils"), default="ils")
    parser.add_argument("--ref", choices=("near", "far", "mean"), default="near",
                        help="reference-anchor strategy")
    parser.add_argument("--blocks", type=int, default=1, metavar="M",
                        help="number of temporal blocks for slicing")
    parser.add_argument("--spatial", choices=("none", "all"), default="none",
                        help="enumerate anchor subsets as spatial slices")
    parser.add_argument("--split-channels", action="store_true",
                        help="slice per frequency channel")
    parser.add_argument("--lmin-frac", type=float, default=0.5, metavar="F",
                        help="surviving fraction of slice points after pruning")
    parser.add_argument("--channels", type=_parse_channels, default=None, metavar="LIST",
                        help="comma-separated channels to use (default: all)")
    parser.add_argument("--no-skew-correction", action="store_true",
                        help="force all clock-rate ratios to 1 (ablation)")


def _run_config(args, scenario, trials: int = 1, seed: int = 0) -> RunConfig:
    return RunConfig(
        scenario=scenario,
        trials=trials,
        method=args.method,
        solver=args.solver,
        strategy=args.ref,
        temporal_blocks=args.blocks,
        spatial=args.spatial,
        split_channels=args.split_channels,
        lmin_fraction=args.lmin_frac,
        channels=args.channels,
        seed=seed,
        skew_correction=not args.no_skew_correction,
        randomize_blind=getattr(args, "randomize_blind", False),
    )


def cmd_simulate(args) -> int:
    from .simulate import simulate

    scenario = load_scenario(args.scenario)
    log = simulate(scenario)
    log.write_csv(args.out)
    if args.nodes_out:
        save_nodes(node_table_from_scenario(scenario), args.nodes_out)
    print(f"wrote {len(log)} timestamp rows to {args.out}")
    return EXIT_OK


def cmd_estimate(args) -> int:
    nodes, log = load(args.nodes, args.log, wrapped=args.unwrap)
    if args.unwrap:
        log = unwrap_timestamps(log)
    config = _run_config(args, scenario=None)
    result = estimate_from_log(log, nodes, config)
    if not result.converged:
        print("estimation did not converge", file=sys.stderr)
        return EXIT_ESTIMATION
    out = {
        "x": result.position.x,
        "y": result.position.y,
        "method": result.method,
        "converged": result.converged,
    }
    if args.json:
        Path(args.json).write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")
    print(f"{result.position.x!r} {result.position.y!r}")
    return EXIT_OK


def cmd_eval(args) -> int:
    scenario = load_scenario(args.scenario)
    config = _run_config(args, scenario, trials=args.trials, seed=args.seed)
    report = run_experiment(config)
    write_report(report, config, args.out_dir)
    print(json.dumps(summary_dict(report, config), indent=2, sort_keys=True))
    if report.n_failed == config.trials:
        return EXIT_ESTIMATION
    return EXIT_OK


def _parse_sweep(text: str) -> tuple[str, list]:
    if "=" not in text:
        raise argparse.ArgumentTypeError("expected PARAM=V1,V2,...")
    name, _, values = text.partition("=")
    parsed = []
    for tok in values.split(","):
        try:
            parsed.append(json.loads(tok))
        except json.JSONDecodeError:
            parsed.append(tok)
    return name, parsed


def _set_by_path(doc: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    node = doc
    for key in parts[:-1]:
        node = node[key]
    if parts[-1] not in node:
        raise KeyError(dotted)
    node[parts[-1]] = value


def cmd_sweep(args) -> int:
    with open(args.scenario) as fh:
        base_doc = json.load(fh)
    name, values = args.param
    out_root = Path(args.out_dir)
    out_root.mkdir(parents=True, exist_ok=True)
    rows = ["value,median_m,max_m,failed"]
    for value in values:
        doc = json.loads(json.dumps(base_doc))
        try:
            _set_by_path(doc, name, value)
        except (KeyError, TypeError):
            print(f"no such scenario parameter: {name}", file=sys.stderr)
            return EXIT_USAGE
        scenario = scenario_from_json(doc)
        config = _run_config(args, scenario, trials=args.trials, seed=args.seed)
        report = run_experiment(config)
        tag = str(value).replace("/", "_")
        write_report(report, config, out_root / f"{name}={tag}")
        rows.append(
            f"{value},"
            f"{'' if report.median_m is None else repr(report.median_m)},"
            f"{'' if report.max_m is None else repr(report.max_m)},"
            f"{report.n_failed}"
        )
        print(f"{name}={value}: median={report.median_m} max={report.max_m}")
    (out_root / "sweep.csv").write_text("\n".join(rows) + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dtdoa", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="run a scenario and write its timestamp log")
    p_sim.add_argument("--scenario", required=True)
    p_sim.add_argument("--out", required=True, help="output log CSV path")
    p_sim.add_argument("--nodes-out", default=None,
                       help="also write the estimation-facing node table JSON")
    p_sim.set_defaults(func=cmd_simulate)

    p_est = sub.add_parser("estimate", help="estimate the blind position from files")
    p_est.add_argument("--nodes", required=True, help="node table JSON")
    p_est.add_argument("--log", required=True, help="timestamp log CSV")
    p_est.add_argument("--unwrap", action="store_true",
                       help="log carries wrapped 32-bit counter values")
    p_est.add_argument("--json", default=None, help="write the estimate as JSON")
    _add_method_flags(p_est)
    p_est.set_defaults(func=cmd_estimate)

    p_eval = sub.add_parser("eval", help="Monte-Carlo trials of simulate+estimate")
    p_eval.add_argument("--scenario", required=True)
    p_eval.add_argument("--trials", type=int, default=100)
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.add_argument("--out-dir", required=True)
    p_eval.add_argument("--randomize-blind", action="store_true",
                        help="redraw the blind position inside the anchor box per trial")
    _add_method_flags(p_eval)
    p_eval.set_defaults(func=cmd_eval)

    p_sweep = sub.add_parser("sweep", help="eval over a range of one scenario parameter")
    p_sweep.add_argument("--scenario", required=True)
    p_sweep.add_argument("--param", type=_parse_sweep, required=True, metavar="PARAM=V1,V2",
                         help="dotted scenario-JSON path and values")
    p_sweep.add_argument("--trials", type=int, default=20)
    p_sweep.add_argument("--seed", type=int, default=0)
    p_sweep.add_argument("--out-dir", required=True)
    p_sweep.add_argument("--randomize-blind", action="store_true")
    _add_method_flags(p_sweep)
    p_sweep.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (DataError, ScenarioError, UnwrapError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except json.JSONDecodeError as exc:
        print(f"data error: invalid JSON: {exc}", file=sys.stderr)
        return EXIT_DATA
    except EstimationError as exc:
        print(f"estimation failed: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    except ValueError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
