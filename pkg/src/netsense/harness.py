"""Monte Carlo driver: config, seeded trials, scoring and reports.

Per-trial seeds come from ``numpy.random.SeedSequence((master, K, index))``
(two 32-bit words of its state joined into one 64-bit integer), so any single
trial can be replayed from the master seed alone, regardless of how the
campaign was split across worker processes.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .association import SensingOutput, SolverConfig, Thresholds, localize_all
from .geometry import PathConfig, Scene, SceneConfig, generate_paths, generate_scene
from .ofdm import OfdmConfig, build_channels, generate_symbols, modulate, remove_cp_dft, simulate_reception
from .ranging import LassoParams, PhaseOneResult, phase_one

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = [
    "AssociationConfig",
    "RunConfig",
    "ExperimentConfig",
    "TrialRecord",
    "MetricsRow",
    "config_from_dict",
    "load_config",
    "config_to_dict",
    "trial_seed",
    "match_and_score",
    "run_trial",
    "run_monte_carlo",
    "aggregate",
    "emit_report",
    "summarize",
]

log = logging.getLogger(__name__)


@dataclass
class AssociationConfig(SolverConfig):
    # 0 selects the documented defaults: one range bin, and M^2 * delta^2
    delta: float = 0.0
    beta: float = 0.0


@dataclass
class RunConfig:
    trials: int = 500
    k_min: int = 2
    k_max: int = 6
    hit_radius: float = 0.375
    seed: int = 20240101
    out: str = "results"
    jobs: int = 1
    save_trials: bool = False

    def validate(self) -> None:
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.hit_radius <= 0:
            raise ValueError("hit_radius must be positive")
        if not 0 <= self.k_min <= self.k_max:
            raise ValueError(f"bad K range {self.k_min}..{self.k_max}")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")


@dataclass
class ExperimentConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    paths: PathConfig = field(default_factory=PathConfig)
    ofdm: OfdmConfig = field(default_factory=OfdmConfig)
    lasso: LassoParams = field(default_factory=LassoParams)
    association: AssociationConfig = field(default_factory=AssociationConfig)
    experiment: RunConfig = field(default_factory=RunConfig)

    def validate(self) -> None:
        self.scene.validate()
        self.ofdm.validate()
        self.lasso.validate()
        self.experiment.validate()

    def thresholds(self) -> Thresholds:
        delta = self.association.delta or self.ofdm.range_bin
        beta = self.association.beta or self.scene.n_bs**2 * delta**2
        return Thresholds(delta, beta)

    def solver(self) -> SolverConfig:
        kw = {f.name: getattr(self.association, f.name) for f in dataclasses.fields(SolverConfig)}
        kw["area_side"] = self.scene.area_side
        return SolverConfig(**kw)


_SECTIONS = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}


def _section(cls, values: dict, name: str):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ValueError(f"unknown keys in [{name}]: {sorted(unknown)}")
    return cls(**values)


def config_from_dict(data: dict) -> ExperimentConfig:
    unknown = set(data) - set(_SECTIONS)
    if unknown:
        raise ValueError(f"unknown config sections: {sorted(unknown)}")
    defaults = ExperimentConfig()
    parts = {}
    for f in dataclasses.fields(ExperimentConfig):
        cls = type(getattr(defaults, f.name))
        parts[f.name] = _section(cls, data.get(f.name, {}), f.name)
    cfg = ExperimentConfig(**parts)
    cfg.validate()
    return cfg


def load_config(path: str | os.PathLike) -> ExperimentConfig:
    """Read a TOML config, or a JSON run manifest (its ``config`` entry)."""
    path = Path(path)
    raw = path.read_bytes()
    if path.suffix == ".json":
        data = json.loads(raw)
        data = data.get("config", data)
    else:
        data = tomllib.loads(raw.decode())
    return config_from_dict(data)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return dataclasses.asdict(cfg)


def trial_seed(master: int, k: int, index: int) -> int:
    words = np.random.SeedSequence((int(master), int(k), int(index))).generate_state(2, np.uint32)
    return (int(words[0]) << 32) | int(words[1])


@dataclass
class TrialRecord:
    seed: int
    k: int
    index: int
    scene: Scene
    output: SensingOutput | None
    missed: int
    false_alarms: int
    cpu_time: float
    range_sets: list | None = None
    error: str | None = None
    phase_one: PhaseOneResult | None = None

    def to_json(self) -> dict:
        out = self.output
        return {
            "k": self.k,
            "index": self.index,
            "seed": self.seed,
            "bs": self.scene.bs_positions.tolist(),
            "targets": self.scene.target_positions.tolist(),
            "k_hat": None if out is None else out.k_hat,
            "estimates": [] if out is None else out.positions.tolist(),
            "residuals": [] if out is None else [t.residual for t in out.targets],
            "missed": self.missed,
            "false_alarms": self.false_alarms,
            "error": self.error,
        }


@dataclass
class MetricsRow:
    K: int
    trials: int
    p_md: float
    p_fa: float
    mean_cpu_time: float


def match_and_score(truth, estimates, hit_radius: float) -> tuple[int, int]:
    """Greedy one-to-one matching by ascending distance within ``hit_radius``.

    Returns ``(missed, false_alarms)``; ties resolve to the lower truth index,
    then the lower estimate index.
    """
    truth = np.asarray(truth, dtype=float).reshape(-1, 2)
    est = np.asarray(estimates, dtype=float).reshape(-1, 2)
    if len(truth) == 0 or len(est) == 0:
        return len(truth), len(est)
    dist = np.hypot(truth[:, None, 0] - est[None, :, 0], truth[:, None, 1] - est[None, :, 1])
    pairs = sorted((dist[i, j], i, j) for i, j in zip(*np.nonzero(dist <= hit_radius)))
    used_t, used_e = set(), set()
    for _, i, j in pairs:
        if i not in used_t and j not in used_e:
            used_t.add(i)
            used_e.add(j)
    matched = len(used_t)
    return len(truth) - matched, len(est) - matched


def run_trial(
    cfg: ExperimentConfig,
    k: int,
    seed: int,
    index: int = 0,
    keep_range_sets: bool = False,
    keep_phase_one: bool = False,
) -> TrialRecord:
    """One end-to-end realization with ``k`` targets, fully determined by ``seed``.

    ``keep_phase_one`` also retains the per-receiver channel estimates, which
    are large; use it for single-trial inspection only.
    """
    t0 = time.process_time()
    rng = np.random.default_rng(seed)
    scene = generate_scene(dataclasses.replace(cfg.scene, n_targets=k), rng)
    try:
        M = scene.n_bs
        paths = generate_paths(scene, cfg.paths, rng)
        channels = build_channels(paths, cfg.ofdm, M)
        symbols = generate_symbols(cfg.ofdm, M, rng)
        rx = simulate_reception(channels, modulate(symbols, cfg.ofdm), cfg.ofdm, rng)
        obs = remove_cp_dft(rx, cfg.ofdm)
        p1 = phase_one(obs, symbols, cfg.lasso, cfg.ofdm)
        output = localize_all(p1.range_sets, scene.bs_positions, cfg.thresholds(), cfg.solver())
    except Exception as exc:  # recorded, campaign continues
        log.warning("trial K=%d index=%d seed=%d failed: %s", k, index, seed, exc)
        return TrialRecord(seed, k, index, scene, None, k, 0, time.process_time() - t0, error=repr(exc))
    missed, fa = match_and_score(scene.target_positions, output.positions, cfg.experiment.hit_radius)
    return TrialRecord(
        seed,
        k,
        index,
        scene,
        output,
        missed,
        fa,
        time.process_time() - t0,
        range_sets=p1.range_sets if keep_range_sets else None,
        phase_one=p1 if keep_phase_one else None,
    )


def _run_job(args):
    cfg, k, seed, index, keep = args
    return run_trial(cfg, k, seed, index, keep)


def aggregate(records: list[TrialRecord]) -> list[MetricsRow]:
    """Per-K missed-detection and false-alarm rates, both over ``K * trials``."""
    by_k: dict[int, list[TrialRecord]] = {}
    for r in records:
        by_k.setdefault(r.k, []).append(r)
    rows = []
    for k in sorted(by_k):
        recs = by_k[k]
        n = len(recs)
        denom = k * n
        missed = sum(r.missed for r in recs)
        fa = sum(r.false_alarms for r in recs)
        rows.append(
            MetricsRow(
                k,
                n,
                missed / denom if denom else 0.0,
                fa / denom if denom else float(fa > 0),
                sum(r.cpu_time for r in recs) / n,
            )
        )
    return rows


def run_monte_carlo(cfg: ExperimentConfig, keep_range_sets: bool = False, progress=None):
    """Run every configured trial; returns ``(rows, records)`` in (K, index) order."""
    cfg.validate()
    ex = cfg.experiment
    jobs = [
        (cfg, k, trial_seed(ex.seed, k, i), i, keep_range_sets)
        for k in range(ex.k_min, ex.k_max + 1)
        for i in range(ex.trials)
    ]
    if ex.jobs > 1:
        with ProcessPoolExecutor(max_workers=ex.jobs) as pool:
            it = pool.map(_run_job, jobs, chunksize=max(1, len(jobs) // (8 * ex.jobs)))
            records = []
            for rec in it:
                records.append(rec)
                if progress:
                    progress(rec)
    else:
        records = []
        for job in jobs:
            rec = _run_job(job)
            records.append(rec)
            if progress:
                progress(rec)
    records.sort(key=lambda r: (r.k, r.index))
    return aggregate(records), records


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def emit_report(rows: list[MetricsRow], records, cfg: ExperimentConfig, out_dir) -> dict[str, Path]:
    """Write ``metrics.csv``, ``timing.csv``, ``manifest.json`` and optionally ``trials.jsonl``.

    ``metrics.csv`` carries only seed-determined numbers so reruns compare
    byte for byte; CPU time goes to ``timing.csv``.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths = {"metrics": out / "metrics.csv", "timing": out / "timing.csv", "manifest": out / "manifest.json"}
        with open(paths["metrics"], "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["K", "trials", "p_md", "p_fa"])
            for r in rows:
                w.writerow([r.K, r.trials, _fmt(r.p_md), _fmt(r.p_fa)])
        with open(paths["timing"], "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["K", "trials", "mean_cpu_s"])
            for r in rows:
                w.writerow([r.K, r.trials, _fmt(r.mean_cpu_time)])
        manifest = {
            "code_version": __version__,
            "master_seed": cfg.experiment.seed,
            "seed_rule": "SeedSequence((master_seed, K, trial_index)).generate_state(2, uint32) -> hi<<32 | lo",
            "range_bin_m": cfg.ofdm.range_bin,
            "thresholds": dataclasses.asdict(cfg.thresholds()),
            "config": config_to_dict(cfg),
        }
        paths["manifest"].write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        if cfg.experiment.save_trials and records:
            paths["trials"] = out / "trials.jsonl"
            with open(paths["trials"], "w") as fh:
                for rec in records:
                    fh.write(json.dumps(rec.to_json()) + "\n")
    except OSError as exc:
        raise OSError(f"could not write report to {out}: {exc}") from exc
    return paths


def summarize(rows: list[MetricsRow]) -> str:
    lines = [f"{'K':>3} {'trials':>7} {'P_MD':>8} {'P_FA':>8} {'cpu[s]':>8}"]
    for r in rows:
        lines.append(f"{r.K:>3} {r.trials:>7} {r.p_md:>8.4f} {r.p_fa:>8.4f} {r.mean_cpu_time:>8.4f}")
    return "\n".join(lines)
