"""Self-checks against independent oracles, run by ``netsense check``.

Each check builds its own synthetic input and compares the pipeline against
something computed another way (dense matrices instead of FFTs, closed forms,
brute-force grids, a re-derivation of the constraints).
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .association import gauss_newton_localize, initial_position
from .geometry import PathConfig, SceneConfig, generate_paths, generate_scene
from .harness import ExperimentConfig, run_trial, trial_seed
from .ofdm import (
    OfdmConfig,
    build_channels,
    build_dictionary,
    generate_symbols,
    modulate,
    remove_cp_dft,
    simulate_reception,
)
from .ranging import LassoParams, kkt_violation, lasso_solve
from .validate import check_output

__all__ = ["CheckResult", "run_checks"]


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def time_frequency_equivalence(n_scenes: int = 10, seed: int = 0) -> CheckResult:
    """DFT of the time-domain reception vs the dense linear frequency model."""
    cfg = OfdmConfig(n_subcarriers=256, cp_len=128, n_taps=128, subcarrier_spacing=400e6 / 256, noise_var=0.0)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_scenes):
        scene = generate_scene(SceneConfig(n_bs=3, n_targets=2, area_side=30.0), rng)
        paths = generate_paths(scene, PathConfig(clutter_max=80.0), rng)
        h = build_channels(paths, cfg, scene.n_bs)
        s = generate_symbols(cfg, scene.n_bs, rng)
        obs = remove_cp_dft(simulate_reception(h, modulate(s, cfg), cfg), cfg)
        D = build_dictionary(s, cfg)
        for m in range(scene.n_bs):
            model = math.sqrt(cfg.power) * D @ h[:, m, :].ravel()
            worst = max(worst, np.linalg.norm(obs[m] - model) / max(np.linalg.norm(model), 1e-300))
    return CheckResult("time/frequency model equivalence", worst <= 1e-9, f"max relative error {worst:.2e}")


def lasso_scalar() -> CheckResult:
    est = lasso_solve(np.array([[1.0]]), np.array([2.0]), LassoParams(lam=0.5))
    err = abs(est.h[0] - 1.5)
    return CheckResult("LASSO scalar soft-threshold", err <= 1e-9, f"|h - 1.5| = {err:.2e}")


def lasso_kkt(n: int = 5, seed: int = 1) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        A = (rng.standard_normal((40, 80)) + 1j * rng.standard_normal((40, 80))) / math.sqrt(2)
        x = np.zeros(80, dtype=complex)
        x[rng.choice(80, 4, replace=False)] = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        y = A @ x + 0.05 * (rng.standard_normal(40) + 1j * rng.standard_normal(40))
        est = lasso_solve(A, y, LassoParams())
        worst = max(worst, kkt_violation(A, y, est.h, est.lam) / est.lam)
    return CheckResult("LASSO KKT certificate", worst <= 1e-3, f"max violation / lambda = {worst:.2e}")


def gn_vs_grid(n: int = 10, seed: int = 2) -> CheckResult:
    rng = np.random.default_rng(seed)
    bs = np.array([[0.0, 0.0], [120.0, 0.0], [0.0, 120.0], [120.0, 120.0]])
    worst = -math.inf
    for _ in range(n):
        t = rng.uniform(10, 110, size=2)
        d = np.hypot(*(bs - t).T)
        ranges = d[:, None] + d[None, :] + rng.uniform(-0.375, 0.375, size=(4, 4))
        ranges = (ranges + ranges.T) / 2
        res = gauss_newton_localize(bs, ranges, initial_position(bs, ranges))
        g = np.arange(-1.0, 1.0 + 1e-9, 0.01)
        gx, gy = np.meshgrid(t[0] + g, t[1] + g)
        f = np.hypot(gx[..., None] - bs[:, 0], gy[..., None] - bs[:, 1])
        obj = np.sum((f[..., :, None] + f[..., None, :] - ranges) ** 2, axis=(-2, -1))
        worst = max(worst, res.residual / obj.min() - 1.0)
    return CheckResult("Gauss-Newton vs 1 cm grid", worst <= 0.01, f"worst excess over grid minimum {worst:+.2e}")


def pipeline_constraints(n: int = 5, seed: int = 3) -> CheckResult:
    cfg = ExperimentConfig()
    th = cfg.thresholds()
    bad = []
    for i in range(n):
        rec = run_trial(cfg, 4, trial_seed(seed, 4, i), i, keep_range_sets=True)
        if rec.error:
            bad.append(rec.error)
            continue
        bad += check_output(rec.range_sets, rec.output.targets, th.delta, th.beta, rec.scene.bs_positions)
    return CheckResult("output satisfies association constraints", not bad, bad[0] if bad else f"{n} trials clean")


def noiseless_recovery(n: int = 5, seed: int = 4) -> CheckResult:
    cfg = ExperimentConfig()
    cfg.ofdm.noise_var = 0.0
    cfg.paths = dataclasses.replace(cfg.paths, nlos_rate=0.0, clutter_rate=0.0)
    cfg.scene = dataclasses.replace(cfg.scene, min_target_separation=3.0, min_target_bs_distance=3.0)
    ok = 0
    for i in range(n):
        rec = run_trial(cfg, 1, trial_seed(seed, 1, i), i)
        if rec.output is not None and rec.output.k_hat == 1:
            err = np.hypot(*(rec.output.positions[0] - rec.scene.target_positions[0]))
            ok += err <= cfg.ofdm.range_bin
    return CheckResult("noiseless single-target recovery", ok == n, f"{ok}/{n} exact")


def run_checks() -> list[CheckResult]:
    return [
        time_frequency_equivalence(),
        lasso_scalar(),
        lasso_kkt(),
        gn_vs_grid(),
        noiseless_recovery(),
        pipeline_constraints(),
    ]
