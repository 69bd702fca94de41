"""Command line entry point: ``netsense run | trial | check``."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys

import numpy as np

from .harness import (
    ExperimentConfig,
    emit_report,
    load_config,
    match_and_score,
    run_monte_carlo,
    summarize,
    trial_seed,
)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML config file or a run manifest.json")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--noiseless", action="store_true", help="zero receiver noise")
    p.add_argument("--no-nlos", action="store_true", help="disable Type II (NLOS) paths")
    p.add_argument("--no-clutter", action="store_true", help="disable Type III (clutter) paths")
    p.add_argument("-v", "--verbose", action="store_true")


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    ex = cfg.experiment
    for name in ("trials", "k_min", "k_max", "seed", "out", "jobs"):
        val = getattr(args, name, None)
        if val is not None:
            setattr(ex, name, val)
    if getattr(args, "save_trials", False):
        ex.save_trials = True
    if args.noiseless:
        cfg.ofdm.noise_var = 0.0
    if args.no_nlos:
        cfg.paths = dataclasses.replace(cfg.paths, nlos_rate=0.0)
    if args.no_clutter:
        cfg.paths = dataclasses.replace(cfg.paths, clutter_rate=0.0)
    cfg.validate()
    return cfg


def cmd_run(args) -> int:
    cfg = _load(args)
    ex = cfg.experiment
    total = ex.trials * (ex.k_max - ex.k_min + 1)
    done = [0]

    def progress(_rec):
        done[0] += 1
        if args.verbose and done[0] % 50 == 0:
            print(f"  {done[0]}/{total} trials", file=sys.stderr)

    rows, records = run_monte_carlo(cfg, progress=progress)
    paths = emit_report(rows, records, cfg, ex.out)
    print(summarize(rows))
    errors = sum(r.error is not None for r in records)
    if errors:
        print(f"{errors} trial(s) failed; see trials.jsonl with --save-trials", file=sys.stderr)
    for kind, path in paths.items():
        print(f"{kind}: {path}")
    return 0


def cmd_trial(args) -> int:
    from .association import enumerate_candidates, filter_by_residual
    from .harness import run_trial
    from .ranging import dump_range_records

    cfg = _load(args)
    seed = args.trial_seed if args.trial_seed is not None else trial_seed(cfg.experiment.seed, args.k, args.index)
    rec = run_trial(cfg, args.k, seed, args.index, keep_range_sets=True, keep_phase_one=True)
    np.set_printoptions(precision=3, suppress=True)
    print(f"seed {seed}  K={args.k}")
    print("BS positions:\n", rec.scene.bs_positions)
    print("targets:\n", rec.scene.target_positions)
    if rec.error:
        print("trial failed:", rec.error)
        return 1
    M = rec.scene.n_bs
    for u in range(M):
        for m in range(M):
            print(f"D[{u},{m}] = {np.round(rec.range_sets[u][m], 3).tolist()}")
    out = rec.output
    print(f"candidates={out.n_candidates} filtered={out.n_filtered} merged={out.n_merged} selected={out.k_hat}")
    if args.verbose:
        th = cfg.thresholds()
        cands = enumerate_candidates(rec.range_sets, th, cfg.association.expand_matches, cfg.association.max_variants)
        for res in filter_by_residual(cands, rec.scene.bs_positions, rec.range_sets, th, cfg.solver()):
            print(f"  kept ({res.position.x:8.3f}, {res.position.y:8.3f})  R={res.residual:.4f}")
    for t in out.targets:
        print(f"estimate ({t.position.x:8.3f}, {t.position.y:8.3f})  residual {t.residual:.4f}  GN iters {t.iterations}")
    missed, fa = match_and_score(rec.scene.target_positions, out.positions, cfg.experiment.hit_radius)
    print(f"missed={missed} false_alarms={fa}")
    if args.dump:
        with open(args.dump, "w") as fh:
            dump_range_records(rec.phase_one, fh)
        print(f"range records written to {args.dump}")
    if args.json:
        print(json.dumps(rec.to_json()))
    return 0


def cmd_check(args) -> int:
    from .checks import run_checks

    failed = 0
    for res in run_checks():
        print(f"[{'PASS' if res.passed else 'FAIL'}] {res.name}: {res.detail}")
        failed += not res.passed
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="netsense", description="Networked device-free ISAC sensing simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="full Monte Carlo campaign")
    _common(run)
    run.add_argument("--trials", type=int, help="trials per K")
    run.add_argument("--k-min", type=int, dest="k_min")
    run.add_argument("--k-max", type=int, dest="k_max")
    run.add_argument("--out", help="output directory")
    run.add_argument("--jobs", type=int, help="worker processes")
    run.add_argument("--save-trials", action="store_true", help="also write trials.jsonl")
    run.set_defaults(func=cmd_run)

    trial = sub.add_parser("trial", help="one trial with verbose output")
    _common(trial)
    trial.add_argument("--k", type=int, default=3, help="number of targets")
    trial.add_argument("--index", type=int, default=0, help="trial index used to derive the seed")
    trial.add_argument("--trial-seed", type=int, help="use this per-trial seed verbatim")
    trial.add_argument("--dump", help="write per-pair range records (JSON lines) here")
    trial.add_argument("--json", action="store_true", help="print the trial record as JSON")
    trial.set_defaults(func=cmd_trial)

    check = sub.add_parser("check", help="invariant checks against synthetic oracles")
    check.set_defaults(func=cmd_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if getattr(args, "verbose", False) else logging.WARNING)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
