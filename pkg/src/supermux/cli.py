"""Command-line entry points.

Subcommands: fit-alpha (regenerate the surrogate parameter table),
allocate (run one allocation on a channel-stats file), oracle (brute-force
check of one instance), dof (slope sweep), simulate (drop experiments),
report (summarize an experiment output directory).  Every run is seeded
and reproducible; a nonzero exit code signals an invariant violation.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import allocator as al
from .channel import MimoShape, load_channel_stats
from .experiments import (DofConfig, ExperimentConfig, cdf_stats, dof_experiment,
                          load_experiment_config, run_experiment, run_scheme)
from .oracle import brute_force_wsr
from .rates import RateEstimator, with_lookup_table
from .surrogate import (TABLE_SHAPES, fit_table, load_surrogate_table,
                        save_surrogate_table, alpha_lookup)
from .sysim import NetworkScenario, drop_to_csv, generate_drop, load_scenario


def _add_common(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=str, default=None, help="output file or directory")


def _estimator(shape: MimoShape, args) -> RateEstimator:
    if args.mc:
        return RateEstimator(shape=shape, n_samples=args.samples, seed=args.seed)
    return with_lookup_table(shape, n_samples=args.samples, seed=args.seed,
                             x_max=args.table_x_max)


def _alpha_for(shape: MimoShape, args) -> float:
    table = load_surrogate_table(args.alpha_table) if args.alpha_table else None
    est = RateEstimator(shape=shape, n_samples=args.samples, seed=args.seed)
    return alpha_lookup(shape, table, est)


def cmd_fit_alpha(args) -> int:
    shapes = TABLE_SHAPES
    if args.shape:
        shapes = (MimoShape(*map(int, args.shape.split("x"))),)
    table = fit_table(shapes, n_samples=args.samples, seed=args.seed)
    out = args.out or "alpha_table.txt"
    save_surrogate_table(table, out, n_samples=args.samples, seed=args.seed)
    for (n_t, n_r), (alpha, mse) in sorted(table.entries.items()):
        print(f"{n_t:3d} x {n_r:2d}: alpha={alpha:.4f} mse={mse:.3e}")
    print(f"wrote {out}")
    return 0


def cmd_allocate(args) -> int:
    stats = load_channel_stats(args.stats)
    shape = MimoShape(*map(int, args.shape.split("x")))
    est = _estimator(shape, args)
    alpha = _alpha_for(shape, args)
    alloc, rates = run_scheme(args.scheme, stats, args.mu, args.power, alpha, est,
                              om_split=args.om_split)
    errors = al.allocation_invariant_errors(alloc, stats, args.power)
    record = {
        "scheme": args.scheme,
        "mu": args.mu,
        "p_t": args.power,
        "p_total": alloc.p_total.tolist(),
        "p1": alloc.p1.tolist(),
        "p0": alloc.p0.tolist(),
        "selected_user": [s if s is None else int(s) for s in alloc.selected_user],
        "mode": list(alloc.mode),
        "lambda": alloc.lam,
        "mu_vec": alloc.mu_vec.tolist(),
        "r0": rates.r0,
        "r_k": rates.r_k.tolist(),
        "sum_rate": rates.sum_rate,
        "wsr": rates.wsr,
        "invariant_errors": errors,
    }
    text = json.dumps(record, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return 1 if errors else 0


def cmd_oracle(args) -> int:
    stats = load_channel_stats(args.stats)
    shape = MimoShape(*map(int, args.shape.split("x")))
    est = _estimator(shape, args)
    res = brute_force_wsr(stats, args.mu, args.power, args.grid, est)
    record = {
        "best_wsr": res.best_wsr,
        "p_total": np.asarray(res.best_point["p_total"]).tolist(),
        "p1": np.asarray(res.best_point["p1"]).tolist(),
        "mu_vec": np.asarray(res.best_point["mu_vec"]).tolist(),
        "mode": list(res.best_point["mode"]),
        "trace": res.trace,
    }
    text = json.dumps(record, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def cmd_dof(args) -> int:
    config = DofConfig(seed=args.seed, out_dir=args.out or "out",
                       schemes=tuple(args.schemes.split(",")),
                       shapes=tuple(MimoShape(*map(int, s.split("x")))
                                    for s in args.shapes.split(",")),
                       n_users=args.users, n_subchannels=args.subchannels)
    rows = dof_experiment(config, write_files=args.out is not None)
    for scheme, tag, slope in rows:
        print(f"{scheme:6s} {tag:6s} slope={slope:.3f} bits/s/Hz per log2(P)")
    return 0


def cmd_simulate(args) -> int:
    if args.config:
        config = load_experiment_config(args.config)
        if args.out:
            config = ExperimentConfig(**{**config.__dict__, "out_dir": args.out})
        if args.seed is not None:
            config = ExperimentConfig(**{**config.__dict__, "seed": args.seed})
    else:
        config = ExperimentConfig(
            seed=args.seed or 0, out_dir=args.out or "out",
            user_counts=tuple(int(k) for k in args.users.split(",")),
            schemes=tuple(args.schemes.split(",")),
            n_drops=args.drops,
            shapes=tuple(MimoShape(*map(int, s.split("x")))
                         for s in args.shapes.split(",")))
    result = run_experiment(config)
    for (scheme, k, tag), samples in sorted(result.sum_rates.items()):
        if samples.size:
            print(f"{scheme:5s} K={k:3d} {tag}: mean sum rate "
                  f"{samples.mean():8.3f} bits/s/Hz over {samples.size} drops")
    skipped = result.manifest.get("skipped", {})
    if skipped:
        print(f"skipped drops: {skipped}")
    return 0


def cmd_drop(args) -> int:
    scenario = load_scenario(args.scenario) if args.scenario else NetworkScenario()
    drop = generate_drop(scenario, args.users, args.seed, drop_index=args.index)
    text = drop_to_csv(drop)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


def cmd_report(args) -> int:
    base = Path(args.dir)
    bad = 0
    for cdf_path in sorted(base.glob("**/cdf.csv")):
        rows = cdf_path.read_text(encoding="utf-8").strip().splitlines()[1:]
        by_key = {}
        for row in rows:
            scheme, k, v = row.split(",")
            by_key.setdefault((scheme, int(k)), []).append(float(v))
        print(f"== {cdf_path.parent.name} ==")
        for (scheme, k), vals in sorted(by_key.items()):
            arr = np.array(vals)
            line = f"{scheme:5s} K={k:3d}: mean={arr.mean():8.3f}"
            if arr.size >= 20:
                _, _, p5 = cdf_stats(arr)
                line += f"  p5={p5:8.3f}"
            print(line + f"  n={arr.size}")
            if np.any(arr < 0):
                bad += 1
    return 1 if bad else 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="supermux",
        description="Superposed multicast/unicast rate evaluation and allocation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit-alpha", help="fit the surrogate parameter table")
    p.add_argument("--shape", type=str, default=None, help="single shape, e.g. 8x4")
    p.add_argument("--samples", type=int, default=100_000)
    _add_common(p)
    p.set_defaults(func=cmd_fit_alpha)

    p = sub.add_parser("allocate", help="run one allocation scheme")
    p.add_argument("stats", type=str, help="channel-stats text file")
    p.add_argument("--scheme", choices=("alg1", "alg2", "uo", "mo", "om"),
                   default="alg1")
    p.add_argument("--mu", type=float, required=True)
    p.add_argument("--power", type=float, default=1.0)
    p.add_argument("--shape", type=str, default="8x4")
    p.add_argument("--alpha-table", type=str, default=None)
    p.add_argument("--om-split", type=float, default=0.5)
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--table-x-max", type=float, default=1e8)
    p.add_argument("--mc", action="store_true", help="Monte-Carlo mode (no table)")
    _add_common(p)
    p.set_defaults(func=cmd_allocate)

    p = sub.add_parser("oracle", help="brute-force search on a small instance")
    p.add_argument("stats", type=str)
    p.add_argument("--mu", type=float, required=True)
    p.add_argument("--power", type=float, default=1.0)
    p.add_argument("--shape", type=str, default="8x4")
    p.add_argument("--grid", type=int, default=16)
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--table-x-max", type=float, default=1e8)
    p.add_argument("--mc", action="store_true")
    _add_common(p)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("dof", help="high-SNR slope sweep")
    p.add_argument("--schemes", type=str, default="mo,uo,mixed")
    p.add_argument("--shapes", type=str, default="2x2")
    p.add_argument("--users", type=int, default=3)
    p.add_argument("--subchannels", type=int, default=2)
    _add_common(p)
    p.set_defaults(func=cmd_dof)

    p = sub.add_parser("simulate", help="system-level drop experiments")
    p.add_argument("--config", type=str, default=None, help="JSON experiment config")
    p.add_argument("--users", type=str, default="20")
    p.add_argument("--schemes", type=str, default="alg1,uo,mo,om")
    p.add_argument("--drops", type=int, default=200)
    p.add_argument("--shapes", type=str, default="8x4")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", type=str, default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("drop", help="export one user drop as CSV")
    p.add_argument("--scenario", type=str, default=None, help="scenario JSON file")
    p.add_argument("--users", type=int, default=20)
    p.add_argument("--index", type=int, default=0)
    _add_common(p)
    p.set_defaults(func=cmd_drop)

    p = sub.add_parser("report", help="summarize an experiment output directory")
    p.add_argument("dir", type=str)
    p.set_defaults(func=cmd_report)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
