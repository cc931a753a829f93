"""Command-line front end.

Verbs: ``simulate``, ``solve``, ``rollout-eval``, ``boundary``, and
``experiment``.  Every behavior here is a thin shell over library calls.
Exit codes: 0 success, 1 config error, 2 capacity or convergence error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .bounds import revenue_boundary
from .experiments import (
    ConfigError,
    PRESETS,
    apply_overrides,
    build_config,
    load_config_file,
    run_experiment,
)
from .solver import ConvergenceError, save_solve_result, solve_average_reward
from .statespace import CapacityError, build_explicit_model

__all__ = ["main", "build_parser"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crnsim",
        description="Admission control and channel allocation experiments "
        "for a slotted cognitive overlay network.",
    )
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb, text in [
        ("simulate", "run the configured policies, one CSV row per run"),
        ("solve", "solve the exact model and write the result file"),
        ("rollout-eval", "sweep the expected segment revenue over held populations"),
        ("boundary", "estimate the revenue upper bound"),
        ("experiment", "run a full sweep experiment (CSV + JSON summary)"),
    ]:
        p = sub.add_parser(verb, help=text)
        src = p.add_mutually_exclusive_group(required=True)
        src.add_argument("--config", help="config file (INI sections or JSON)")
        src.add_argument("--preset", choices=sorted(PRESETS), help="built-in preset")
        p.add_argument("--seed", type=int, help="replace the seed list with this seed")
        p.add_argument("--out", default="out", help="output directory (default: out)")
        p.add_argument("--jobs", type=int, default=1, help="parallel workers")
        p.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="SECTION.KEY=VALUE",
            help="override a config entry (repeatable)",
        )
    return parser


def _load(args) -> dict:
    if args.preset:
        raw = {k: dict(v) for k, v in PRESETS[args.preset].items()}
    else:
        raw = load_config_file(args.config)
    raw = apply_overrides(raw, args.overrides)
    if args.seed is not None:
        raw.setdefault("simulate", {})["seeds"] = str(args.seed)
    return raw


def _cmd_experiment(args, kind: str | None = None) -> int:
    config = build_config(_load(args))
    if kind is not None and config.kind != kind:
        raise ConfigError(
            f"experiment.kind: this verb needs kind={kind!r}, got {config.kind!r}"
        )
    paths = run_experiment(config, args.out, jobs=args.jobs)
    print(f"wrote {paths['csv']}")
    print(f"wrote {paths['summary']}")
    return 0


def _cmd_solve(args) -> int:
    config = build_config(_load(args))
    model = build_explicit_model(config.system, state_limit=config.state_limit)
    result = solve_average_reward(
        model, tol=config.solve_tol, max_iter=config.solve_max_iter
    )
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, f"{config.name}_solve.json")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        save_solve_result(result, model, fh)
    print(f"A_star={result.avg_revenue!r} iterations={result.iterations} "
          f"span={result.span_residual:.3e}")
    print(f"wrote {path}")
    return 0


def _cmd_boundary(args) -> int:
    config = build_config(_load(args))
    seed = config.seeds[0]
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xB0]))
    result = revenue_boundary(config.system, config.boundary_runs, rng)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, f"{config.name}_boundary.json")
    payload = {
        "config_id": config.name,
        "g_bound": result.g_bound,
        "std_err": result.std_err,
        "argmax_avail": result.argmax_avail,
        "argmax_hold": result.argmax_hold,
        "n_runs": config.boundary_runs,
        "seed": seed,
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")
    print(f"g_bound={result.g_bound!r} at avail={result.argmax_avail} "
          f"hold={result.argmax_hold} (se={result.std_err:.4g})")
    print(f"wrote {path}")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.verb == "experiment":
            return _cmd_experiment(args)
        if args.verb == "simulate":
            return _cmd_experiment(args, kind="simulate")
        if args.verb == "rollout-eval":
            return _cmd_experiment(args, kind="gbar")
        if args.verb == "solve":
            return _cmd_solve(args)
        if args.verb == "boundary":
            return _cmd_boundary(args)
        raise AssertionError(args.verb)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (CapacityError, ConvergenceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
