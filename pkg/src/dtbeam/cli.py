"""Command-line entry point.

    dtbeam run --config configs/desk.ini --method ldtpa --seed 0,1 --out results
    dtbeam aggregate-evolution results/*.rewards.csv --window 50 --out evolution.csv
    dtbeam aggregate-cdf results/*.eval.csv --out cdf.csv
    dtbeam pattern-export --elements 10 --ratio-db 26 --out pattern.csv
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import antenna, experiment

log = logging.getLogger("dtbeam")


def _out_file(out, default_name: str) -> Path:
    p = Path(out) if out else Path(default_name)
    if p.is_dir() or (out and str(out).endswith(("/", "\\"))):
        p = p / default_name
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def cmd_run(args) -> int:
    methods = args.method.split(",") if args.method else [None]
    seeds = experiment.parse_seeds(args.seed) if args.seed else None
    for method in methods:
        cfg = experiment.load_config(args.config, desk_scale=args.desk_scale, method=method,
                                     seeds=seeds, output_dir=args.out)
        log.info("running %s over seeds %s -> %s", cfg.method, cfg.seeds, cfg.output_dir)
        runs = experiment.run_experiment(cfg, workers=args.workers)
        for art in runs:
            tail = art.rewards[-min(10, art.rewards.shape[0]):].mean()
            log.info("%s: final-window mean %.3f, eval mean %.3f (%.1f s)", art.run_id, tail,
                     art.eval_rewards.mean(), sum(art.wall_clock.values()))
    return 0


def cmd_aggregate_evolution(args) -> int:
    runs = experiment.group_by_method(args.inputs)
    steps, table = experiment.aggregate_evolution(runs, args.window)
    path = _out_file(args.out, "evolution.csv")
    experiment.write_evolution_csv(path, steps, table, args.window)
    log.info("wrote %s (%d rows, methods %s)", path, len(steps), ", ".join(table))
    return 0


def cmd_aggregate_cdf(args) -> int:
    runs = experiment.group_by_method(args.inputs)
    cdfs = {m: experiment.aggregate_cdf(np.concatenate([a.ravel() for a in arrays]))
            for m, arrays in runs.items()}
    path = _out_file(args.out, "cdf.csv")
    experiment.write_cdf_csv(path, cdfs)
    log.info("wrote %s (methods %s)", path, ", ".join(cdfs))
    return 0


def cmd_pattern_export(args) -> int:
    if args.ratio_db is None:
        coeffs = antenna.taper_coefficients(args.elements, antenna.UNIFORM)
    else:
        coeffs = antenna.dt_coefficients(args.elements, args.ratio_db)
    pattern = antenna.linear_pattern(coeffs, spacing=args.spacing, n_points=args.points)
    path = _out_file(args.out, "pattern.csv")
    antenna.export_pattern_csv(pattern, path)
    m = antenna.pattern_metrics(pattern)
    sll = "none" if m.max_sidelobe_rel_db is None else f"{m.max_sidelobe_rel_db:.2f} dB"
    log.info("wrote %s: HPBW %.3f deg, max side lobe %s", path, np.degrees(m.hpbw),
             sll)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dtbeam", description="Multi-BS mmWave blind beam alignment")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="train or roll out one or more methods")
    r.add_argument("--config", help="INI file; omitted keys keep their defaults")
    r.add_argument("--seed", help="comma-separated seeds, overrides the config")
    r.add_argument("--method", help="oracle, drl_ba, dtpa_fixed or ldtpa (comma list allowed)")
    r.add_argument("--out", help="output directory, overrides the config")
    r.add_argument("--desk-scale", action="store_true",
                   help="shrink to 4 BS, 3 UE, 4x4 arrays, 100x200 steps, seeds 0,1")
    r.add_argument("--workers", type=int, default=1, help="worker processes over seeds")
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("aggregate-evolution", help="mean reward per step across seeds")
    e.add_argument("inputs", nargs="+", help="*.rewards.csv files")
    e.add_argument("--window", type=int, default=1, help="moving-average length")
    e.add_argument("--out", help="output CSV (or directory)")
    e.set_defaults(func=cmd_aggregate_evolution)

    c = sub.add_parser("aggregate-cdf", help="empirical CDF of evaluation rates")
    c.add_argument("inputs", nargs="+", help="*.eval.csv files")
    c.add_argument("--out", help="output CSV (or directory)")
    c.set_defaults(func=cmd_aggregate_cdf)

    a = sub.add_parser("pattern-export", help="linear array factor of a taper as CSV")
    a.add_argument("--elements", type=int, default=10)
    a.add_argument("--ratio-db", type=float, default=None,
                   help="Dolph-Tschebyscheff side-lobe ratio; omit for a uniform taper")
    a.add_argument("--spacing", type=float, default=0.5, help="element spacing in wavelengths")
    a.add_argument("--points", type=int, default=36001)
    a.add_argument("--out", help="output CSV (or directory)")
    a.set_defaults(func=cmd_pattern_export)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
