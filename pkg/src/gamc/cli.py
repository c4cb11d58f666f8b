"""Command-line entry point.

Subcommands:
  run <config>         run the configured experiment, write traces + summary
  simulate <config>    write the configured RV dataset (and noise sidecar)
  summarize <dir>      rebuild summary.csv from a finished run directory
  complexity --n N     print the per-step cost table at dimension N

Exit codes: 0 success, 1 runtime failure, 2 usage/config errors.
"""

from __future__ import annotations

import argparse
import sys

from .diagnostics import complexity_table
from .harness import (
    ParseError,
    ValidationError,
    load_config,
    run_experiment,
    simulate_datasets,
    summarize_directory,
)
from .sampler import ConfigError

_USAGE_ERRORS = (FileNotFoundError, NotADirectoryError, IsADirectoryError,
                 ParseError, ValidationError, ConfigError, KeyError)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gamc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run an experiment from a config file")
    run_p.add_argument("config", help="path to the JSON experiment config")
    run_p.add_argument("--seed", type=int, default=None, help="override base_seed")
    run_p.add_argument("--output", default=None, help="override output_dir")
    run_p.add_argument(
        "--paper-scale",
        action="store_true",
        help="use the published run sizes (1e5 iterations, 1e4 burn-in)",
    )

    sim_p = sub.add_parser("simulate", help="write the configured RV dataset")
    sim_p.add_argument("config")
    sim_p.add_argument("--seed", type=int, default=None)
    sim_p.add_argument("--output", default=None)

    sum_p = sub.add_parser("summarize", help="rebuild summary.csv for a run directory")
    sum_p.add_argument("directory")

    comp_p = sub.add_parser("complexity", help="print per-step cost scalings")
    comp_p.add_argument("--n", type=int, required=True, help="parameter dimension")
    comp_p.add_argument("--cost-model", choices=("simple", "expensive"), default="simple")
    comp_p.add_argument("--f", type=float, default=1.0, help="target evaluation cost")
    return parser


def _overrides(args) -> dict:
    out = {}
    if args.seed is not None:
        out["seed_override"] = args.seed
    if args.output is not None:
        out["output_override"] = args.output
    return out


def _cmd_run(args) -> int:
    cfg = load_config(args.config, paper_scale=args.paper_scale, **_overrides(args))
    manifest = run_experiment(cfg)
    ok = sum(1 for c in manifest.chains if not c["failed"])
    print(f"{ok}/{len(manifest.chains)} chains finished; outputs in {manifest.directory}")
    for c in manifest.chains:
        if c["failed"]:
            print(f"  failed: {c['sampler']} chain {c['chain']}: {c['error']}", file=sys.stderr)
    return 0 if ok else 1


def _cmd_simulate(args) -> int:
    cfg = load_config(args.config, **_overrides(args))
    files = simulate_datasets(cfg)
    for name, rel in sorted(files.items()):
        print(f"{name}: {cfg.output_dir}/{rel}")
    return 0


def _cmd_summarize(args) -> int:
    print(summarize_directory(args.directory))
    return 0


def _cmd_complexity(args) -> int:
    table = complexity_table(args.n, args.cost_model, f=args.f)
    print(f"per-step cost, {args.cost_model} model, n={args.n}")
    for name in ("mala", "smmala", "mmala", "am"):
        print(f"  {name:8s}{table[name]!r}")
    return 0


_COMMANDS = {
    "run": _cmd_run,
    "simulate": _cmd_simulate,
    "summarize": _cmd_summarize,
    "complexity": _cmd_complexity,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except _USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
