"""Command-line front end: ``driftio run | emit | validate | list-presets``."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import PRESET_NAMES, ConfigError, load_config, load_preset, preset_path, validate_config
from .experiments import (ESTIMATORS, Cell, aggregate, cell_path, comparison, run_cells,
                          write_failures)
from .figures import FIGURE_IDS, MissingRuns, emit_figure_data

BASELINE_REPLICATIONS = 30


def _floats(text: str) -> list:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> list:
    return [int(v) for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="driftio", description="Online inverse optimization under drifting preferences.")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run seed sweeps for one domain or all of them")
    run.add_argument("domain", nargs="?", help=f"preset name ({', '.join(PRESET_NAMES)}) or 'all'; "
                     "may be omitted with --config")
    run.add_argument("--config", help="YAML domain file used instead of a shipped preset")
    run.add_argument("--seeds", type=_ints, help="comma-separated seeds (overrides --replications)")
    run.add_argument("--replications", type=int,
                     help="number of seeds from the extended seed list "
                          f"(default: the preset's count, {BASELINE_REPLICATIONS} in baseline-comparison mode)")
    run.add_argument("--sigma2", default=None,
                     help="noise variance: a value, a comma-separated list, or 'all' for the preset's levels "
                          "(default: the preset's default level)")
    run.add_argument("--drift-mult", type=_floats, default=[1.0],
                     help="drift-rate multiplier(s), comma-separated, e.g. 0.5,1,2 (default 1)")
    run.add_argument("--loss", choices=("kkt", "decision"), help="inverse loss (default: the preset's)")
    run.add_argument("--estimator", choices=ESTIMATORS, default="drift-aware",
                     help="estimator for standard mode (default drift-aware)")
    run.add_argument("--mode", choices=("standard", "baseline-comparison"), default="standard",
                     help="baseline-comparison runs all three estimators and writes comparison.csv")
    run.add_argument("--T", type=int, help="horizon override")
    run.add_argument("--stationary", action="store_true", help="remove drift and shocks")
    run.add_argument("--no-shocks", action="store_true", help="keep smooth drift, remove shocks")
    run.add_argument("--icu-shock", choices=("capacity", "theta", "both"), default="capacity",
                     help="healthcare day-100 shock: capacity doubling, preference doubling, or both")
    run.add_argument("--schedule", choices=("preset", "inverse-sqrt"), default="preset",
                     help="step schedule: the preset's constant step or eta/sqrt(t)")
    run.add_argument("--no-comparator", action="store_true",
                     help="skip the best-fixed-parameter fit (static regret is then omitted)")
    run.add_argument("--out", default="out", help="output directory (default ./out)")

    emit = sub.add_parser("emit", help="write long-format figure data from existing runs")
    emit.add_argument("out", help="directory holding run results")
    emit.add_argument("figure", help=f"figure id: {', '.join(FIGURE_IDS)}")

    val = sub.add_parser("validate", help="check a domain file without running it")
    val.add_argument("path")

    sub.add_parser("list-presets", help="list shipped domain presets")
    return ap


def _sigma2_levels(arg, preset) -> list:
    if arg is None:
        return [preset.default_sigma2]
    if arg.strip().lower() == "all":
        return list(preset.sigma2_levels)
    return _floats(arg)


def plan_cells(args) -> list:
    """Cells for a ``run`` invocation, in a fixed order."""
    if args.config:
        presets = [(load_config(args.config), args.config)]
    elif args.domain == "all":
        presets = [(load_preset(d), None) for d in PRESET_NAMES]
    elif args.domain in PRESET_NAMES:
        presets = [(load_preset(args.domain), None)]
    else:
        raise ConfigError(f"unknown domain {args.domain!r}; choose from {', '.join(PRESET_NAMES)} or 'all'")
    baseline = args.mode == "baseline-comparison"
    estimators = ESTIMATORS if baseline else (args.estimator,)
    cells = []
    for preset, path in presets:
        if args.seeds:
            seeds = args.seeds
        else:
            seeds = preset.seed_list(args.replications or (BASELINE_REPLICATIONS if baseline else None))
        for mult in args.drift_mult:
            for s2 in _sigma2_levels(args.sigma2, preset):
                for est in estimators:
                    for seed in seeds:
                        cells.append(Cell(preset.name, seed, s2, est, args.loss, mult, args.stationary,
                                          args.no_shocks, args.T, args.icu_shock, args.schedule,
                                          not args.no_comparator, path))
    return cells


def cmd_run(args) -> int:
    if args.domain is None and not args.config:
        print("driftio run: a domain or --config is required", file=sys.stderr)
        return 2
    try:
        cells = plan_cells(args)
    except (ConfigError, OSError, ValueError) as exc:
        print(f"driftio run: {exc}", file=sys.stderr)
        return 2
    out = Path(args.out)
    done, failures = run_cells(cells, out)
    cond_dirs = sorted({cell_path(out, c).parents[2] for c in done})
    for d in cond_dirs:
        aggregate(d)
        if args.mode == "baseline-comparison":
            comparison(d)
    manifest = write_failures(out, failures)
    print(f"{len(done)}/{len(cells)} cells completed; results in {out}")
    if manifest is not None:
        for c, err in failures:
            print(f"FAILED {c.domain} {c.condition} {c.estimator} sigma2={c.sigma2} seed={c.seed}: {err}",
                  file=sys.stderr)
        print(f"failure manifest: {manifest}", file=sys.stderr)
        return 1
    return 0


def cmd_emit(args) -> int:
    if args.figure not in FIGURE_IDS:
        print(f"driftio emit: unknown figure {args.figure!r}; choose from {', '.join(FIGURE_IDS)}",
              file=sys.stderr)
        return 2
    try:
        path = emit_figure_data(args.out, args.figure)
    except MissingRuns as exc:
        print(f"driftio emit: runs needed for {args.figure} are missing; run:", file=sys.stderr)
        for cmd in exc.commands:
            print(f"  {cmd}", file=sys.stderr)
        return 1
    print(path)
    return 0


def cmd_validate(args) -> int:
    try:
        problems = validate_config(args.path)
    except OSError as exc:
        print(f"driftio validate: {exc}", file=sys.stderr)
        return 1
    if not problems:
        print("ok")
        return 0
    for p in problems:
        print(p)
    return 1


def cmd_list_presets(args) -> int:
    for name in PRESET_NAMES:
        p = load_preset(name)
        print(f"{name}\tn={p.n} k={p.k} T={p.T}\t{preset_path(name)}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = {"run": cmd_run, "emit": cmd_emit, "validate": cmd_validate,
               "list-presets": cmd_list_presets}[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
