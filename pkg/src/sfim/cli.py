"""Command-line entry point.

Subcommands: ``solve`` (one optimization run), ``check-gradients`` (analytic
vs finite-difference agreement table) and ``experiment`` (Monte-Carlo studies
driven by a spec file).

Exit codes are stable: 0 success, 1 check failure, 2 configuration error,
3 numerical abort, 4 partially completed experiment.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

from . import __version__
from .config_io import ConfigError, load_run_config
from .experiments import (PartialExperimentError, export_heatmap, load_experiment_spec,
                          run_experiment, write_manifest)
from .geometry import generate_scenario
from .gradients import run_gradient_checks
from .optimizer import NumericalAbort, run_ao

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_PARTIAL = 4


def _state_to_dict(state) -> dict:
    return {
        "morph": state.morph.tolist(),
        "phases_re": state.phases.real.tolist(),
        "phases_im": state.phases.imag.tolist(),
        "power_amps": state.power_amps.tolist(),
    }


def cmd_solve(args) -> int:
    config = load_run_config(args.config)
    optimizer = config.optimizer
    if args.mode is not None:
        from dataclasses import replace
        optimizer = replace(optimizer, mode=args.mode)
    os.makedirs(args.out, exist_ok=True)

    outputs = ["trace.csv", "state.json"] + \
        [f"layer_{l}.csv" for l in range(1, config.geometry.layers + 1)]
    if args.dump_channels:
        outputs += [f"omega_{l}.csv" for l in range(1, config.geometry.layers + 1)]
        outputs += ["h.csv", "g.csv"]
    manifest = {
        "command": "solve",
        "seed": args.seed,
        "mode": optimizer.mode,
        "config": config.snapshot(),
        "version": __version__,
        "started_at": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "finished_at": None,
        "outputs": outputs,
    }
    write_manifest(args.out, manifest)

    scenario = generate_scenario(config.geometry, config.scenario, args.seed)
    state, trace = run_ao(config.geometry, scenario, optimizer, args.seed)
    trace.to_csv(os.path.join(args.out, "trace.csv"))
    with open(os.path.join(args.out, "state.json"), "w") as fh:
        json.dump(_state_to_dict(state), fh)
    export_heatmap(state, config.geometry, args.out)
    if args.dump_channels:
        from .channel import build_stack, dump_complex_csv
        stack = build_stack(config.geometry, state, scenario)
        for l, omega in enumerate(stack.interlayer, start=1):
            dump_complex_csv(omega, os.path.join(args.out, f"omega_{l}.csv"))
        dump_complex_csv(stack.user_channels, os.path.join(args.out, "h.csv"))
        dump_complex_csv(stack.cascaded, os.path.join(args.out, "g.csv"))
    manifest["finished_at"] = time.strftime("%Y-%m-%dT%H:%M:%S")
    write_manifest(args.out, manifest)
    print(f"final sum rate {trace.sum_rates[-1]:.6f} bps/Hz "
          f"after {len(trace)} iterations -> {args.out}")
    return EXIT_OK


def cmd_check_gradients(args) -> int:
    geometry = None
    scenario_config = None
    p_max = 0.31622776601683794
    if args.config is not None:
        config = load_run_config(args.config)
        geometry = config.geometry
        scenario_config = config.scenario
        p_max = config.optimizer.p_max
    thresholds = None
    if args.threshold is not None:
        thresholds = {b: args.threshold for b in ("morph", "power", "phase")}
    blocks = args.block if args.block else None
    results = run_gradient_checks(blocks=blocks, n_instances=args.instances,
                                  seed0=args.seed, geometry=geometry,
                                  scenario_config=scenario_config, p_max=p_max,
                                  thresholds=thresholds)
    print(f"{'block':<8} {'seed':>6} {'rel_error':>14} {'threshold':>10} status")
    for row in results:
        status = "pass" if row.passed else "FAIL"
        print(f"{row.block:<8} {row.seed:>6} {row.rel_error:>14.3e} "
              f"{row.threshold:>10.1e} {status}")
    failures = [r for r in results if not r.passed]
    if failures:
        worst = max(failures, key=lambda r: r.rel_error)
        print(f"worst failure: block={worst.block} seed={worst.seed} "
              f"rel_error={worst.rel_error:.3e}")
        return EXIT_CHECK_FAILED
    print(f"all {len(results)} checks passed")
    return EXIT_OK


def cmd_experiment(args) -> int:
    spec = load_experiment_spec(args.spec, out_override=args.out,
                                trials_override=args.trials, n_jobs=args.threads)
    run_experiment(spec)
    print(f"experiment {spec.kind} complete -> {spec.out_dir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sfim",
        description="Simulate and optimize a stacked flexible metasurface downlink.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    solve = sub.add_parser("solve", help="run one optimization")
    solve.add_argument("--config", required=True)
    solve.add_argument("--seed", type=int, default=0)
    solve.add_argument("--mode", choices=("sfim", "hsim", "rsim"))
    solve.add_argument("--out", required=True)
    solve.add_argument("--dump-channels", action="store_true",
                       help="also write the final propagation matrices and "
                            "user/cascaded channels as (row, col, re, im) CSVs")
    solve.set_defaults(func=cmd_solve)

    check = sub.add_parser("check-gradients",
                           help="compare analytic and finite-difference gradients")
    check.add_argument("--config")
    check.add_argument("--block", action="append",
                       choices=("morph", "power", "phase"))
    check.add_argument("--instances", type=int, default=20)
    check.add_argument("--seed", type=int, default=0)
    check.add_argument("--threshold", type=float)
    check.set_defaults(func=cmd_check_gradients)

    experiment = sub.add_parser("experiment", help="run a Monte-Carlo study")
    experiment.add_argument("spec")
    experiment.add_argument("--out")
    experiment.add_argument("--threads", type=int, default=1)
    experiment.add_argument("--trials", type=int)
    experiment.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except PartialExperimentError as exc:
        print(f"experiment partially completed: {exc}", file=sys.stderr)
        return EXIT_PARTIAL


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
