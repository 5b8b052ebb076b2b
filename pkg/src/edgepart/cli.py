"""Command-line entry point.

Exit codes: 0 ok, 1 unexpected error, 2 validation failure, 3 infeasible
configuration, 4 brute-force guard exceeded.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path

from .allocator import STRATEGIES, InfeasibleError, SearchSpaceTooLarge, allocate
from .analytic import SystemState, predict
from .bundled import scenario_path
from .controller import ControllerPolicy, replay
from .experiments import mape, validate_grid, validation_csv
from .profiles import (Configuration, HardwareSpec, ProfileError, dump_profiles, load_profiles,
                       load_workload, profiles_to_dict, select_models, synth_profile)
from .simulator import CACHE_MODES, SimConfig, SimulationError, run_sim

OUTPUT_DIR_ENV = "EDGEPART_OUTPUT_DIR"

EXIT_OK, EXIT_ERROR, EXIT_VALIDATION, EXIT_INFEASIBLE, EXIT_GUARD = 0, 1, 2, 3, 4


def _emit(text: str, output: str | None) -> None:
    if output is None:
        sys.stdout.write(text)
        return
    path = Path(output)
    base = os.environ.get(OUTPUT_DIR_ENV)
    if base and not path.is_absolute():
        path = Path(base) / path
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _load_inputs(args):
    hw, profiles = load_profiles(args.profiles)
    workload = load_workload(args.workload)
    names = workload.models
    models = select_models(profiles, names)
    rates_map = workload.rates_at(args.at)
    return hw, models, names, [rates_map[n] for n in names]


def _resolve_config(args, hw, models, names, rates) -> tuple[Configuration, str]:
    if args.config:
        data = json.loads(Path(args.config).read_text())
        return Configuration.from_dict(data, names), "file"
    strategy = args.optimize or "greedy"
    return allocate(strategy, models, rates, hw).config, strategy


def cmd_predict(args) -> int:
    hw, models, names, rates = _load_inputs(args)
    config, source = _resolve_config(args, hw, models, names, rates)
    est = predict(SystemState(models, rates, hw, config, args.alpha_mode))
    if args.format == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model", "rate", "partition", "cores", "predicted_s", "tpu_wait_s",
                    "cpu_wait_s", "alpha", "rho_tpu", "objective", "feasible"])
        for i, n in enumerate(names):
            w.writerow([n, rates[i], config.partitions[i], config.cores[i],
                        est.per_model_e2e_s[i], est.tpu_wait_s, est.cpu_wait_s[i], est.alpha[i],
                        est.tpu_utilization, est.objective, est.feasible])
        text = buf.getvalue()
    else:
        text = _dumps({"rates": dict(zip(names, rates)), "config": config.to_dict(names),
                       "config_source": source, "alpha_mode": args.alpha_mode,
                       "estimate": est.to_dict()})
    _emit(text, args.output)
    return EXIT_OK if est.feasible else EXIT_INFEASIBLE


def cmd_optimize(args) -> int:
    hw, models, names, rates = _load_inputs(args)
    result = allocate(args.baseline, models, rates, hw, args.threshold_pct)
    out = result.to_dict()
    out["rates"] = dict(zip(names, rates))
    _emit(_dumps(out), args.output)
    return EXIT_OK if result.estimate.feasible else EXIT_INFEASIBLE


def cmd_validate(args) -> int:
    hw, profiles = load_profiles(args.profiles)
    grid = json.loads(Path(args.grid).read_text())
    rows = validate_grid(profiles, hw, grid, args.seed, args.requests, args.cache_mode)
    if args.format == "json":
        text = _dumps({"seed": args.seed, "requests": args.requests, "cache_mode": args.cache_mode,
                       "mape_pct": mape(rows),
                       "rows": [{**vars(r), "ape_pct": r.ape_pct} for r in rows]})
    else:
        text = validation_csv(rows)
    _emit(text, args.output)
    return EXIT_OK


def cmd_simulate(args) -> int:
    hw, models, names, rates = _load_inputs(args)
    config, _ = _resolve_config(args, hw, models, names, rates)
    state = SystemState(models, rates, hw, config)
    report = run_sim(SimConfig(state, args.cache_mode, args.seed, args.requests, args.warmup,
                               args.horizon))
    text = report.to_csv() if args.format == "csv" else report.to_json() + "\n"
    _emit(text, args.output)
    return EXIT_OK


def cmd_replay(args) -> int:
    hw, profiles = load_profiles(args.profiles)
    workload = load_workload(args.workload)
    policy = ControllerPolicy(args.window, args.period, args.hysteresis, args.switch_penalty)
    report = replay(workload, policy, hw, profiles, args.seed, args.horizon, args.cache_mode)
    text = report.to_jsonl()
    if not args.include_wall_time:
        # wall-clock timings are the only non-reproducible field
        lines = []
        for line in text.splitlines():
            rec = json.loads(line)
            rec.pop("decision_wall_s", None)
            lines.append(json.dumps(rec, sort_keys=True))
        text = "\n".join(lines) + "\n"
    _emit(text, args.output)
    return EXIT_OK


def cmd_gen_profile(args) -> int:
    hw = HardwareSpec(args.sram, args.bandwidth, args.cores)
    model = synth_profile(args.name, args.points, args.bytes, args.tpu_s, args.cpu_s, args.decay,
                          hw, input_bytes=args.input_bytes,
                          intermediate_bytes=args.intermediate_bytes)
    if args.output:
        path = Path(args.output)
        base = os.environ.get(OUTPUT_DIR_ENV)
        if base and not path.is_absolute():
            path = Path(base) / path
        path.parent.mkdir(parents=True, exist_ok=True)
        dump_profiles(path, hw, [model])
    else:
        sys.stdout.write(json.dumps(profiles_to_dict(hw, [model]), indent=2) + "\n")
    return EXIT_OK


def _add_common(p, workload=True):
    p.add_argument("--profiles", default=str(scenario_path("edge_models.json")),
                   help="profile JSON (default: bundled edge_models.json)")
    if workload:
        p.add_argument("--workload", required=True, help="workload JSON")
        p.add_argument("--at", type=float, default=0.0,
                       help="time in the workload schedule whose rates are used")
    p.add_argument("--output", "-o", help=f"output file (relative to ${OUTPUT_DIR_ENV} if set)")


def _add_config(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--config", help="configuration JSON {partitions: {...}, cores: {...}}")
    g.add_argument("--optimize", nargs="?", const="greedy", choices=STRATEGIES,
                   help="derive the configuration with a strategy (default greedy)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="edgepart", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("predict", help="analytic latency of a configuration")
    _add_common(p)
    _add_config(p)
    p.add_argument("--alpha-mode", choices=("full", "zero"), default="full")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("optimize", help="choose partitions and cores")
    _add_common(p)
    p.add_argument("--baseline", choices=STRATEGIES, default="greedy")
    p.add_argument("--threshold-pct", type=float, default=10.0)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("validate", help="analytic vs simulated latency over a scenario grid")
    _add_common(p, workload=False)
    p.add_argument("--grid", required=True, help="grid JSON {cells: [{mix, rho, configs}]}")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--requests", type=int, default=100_000)
    p.add_argument("--cache-mode", choices=CACHE_MODES, default="evict_on_switch")
    p.add_argument("--format", choices=("json", "csv"), default="csv")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("simulate", help="discrete-event simulation of one configuration")
    _add_common(p)
    _add_config(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--requests", type=int, default=100_000)
    p.add_argument("--warmup", type=int, default=None)
    p.add_argument("--horizon", type=float, default=None)
    p.add_argument("--cache-mode", choices=CACHE_MODES, default="evict_on_switch")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("replay", help="online controller over a time-varying workload")
    _add_common(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--window", type=float, default=60.0)
    p.add_argument("--period", type=float, default=30.0)
    p.add_argument("--hysteresis", type=float, default=5.0)
    p.add_argument("--switch-penalty", type=float, default=0.0)
    p.add_argument("--horizon", type=float, default=None)
    p.add_argument("--cache-mode", choices=CACHE_MODES, default="evict_on_switch")
    p.add_argument("--include-wall-time", action="store_true",
                   help="keep per-decision wall-clock time (output is then not reproducible)")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("gen-profile", help="write a synthetic single-model profile")
    p.add_argument("--name", default="synthetic")
    p.add_argument("--points", type=int, required=True)
    p.add_argument("--bytes", type=int, required=True)
    p.add_argument("--tpu-s", type=float, default=0.09)
    p.add_argument("--cpu-s", type=float, default=0.5)
    p.add_argument("--decay", type=float, default=0.5)
    p.add_argument("--sram", type=int, default=8_000_000)
    p.add_argument("--bandwidth", type=float, default=320_000_000.0)
    p.add_argument("--cores", type=int, default=4)
    p.add_argument("--input-bytes", type=int, default=150_528)
    p.add_argument("--intermediate-bytes", type=int, default=100_000)
    p.add_argument("--output", "-o")
    p.set_defaults(func=cmd_gen_profile)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SearchSpaceTooLarge as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_GUARD
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ProfileError, SimulationError, ValueError, KeyError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001
        print(f"unexpected error: {exc!r}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
