"""Numba vs pure-numpy timing for the hot kernels, plus whole trials.

    python benchmarks/bench_kernels.py [--repeat 200] [--trials 20]

Kernel timings run both implementations in this process. The end-to-end
numbers run the same trials twice in subprocesses, once with
NETSENSE_NO_NUMBA=1.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from netsense import kernels
from netsense.association import default_thresholds, flatten_range_sets
from netsense.geometry import PathConfig, SceneConfig, generate_paths, generate_scene
from netsense.ofdm import OfdmConfig

TRIAL_SNIPPET = """
import time
from netsense.harness import ExperimentConfig, run_trial, trial_seed
from netsense import kernels
cfg = ExperimentConfig()
run_trial(cfg, 4, 0)  # warm-up / compile
t = time.perf_counter()
for i in range({n}):
    run_trial(cfg, 6, trial_seed(1, 6, i), i)
print(kernels.HAS_NUMBA, (time.perf_counter() - t) / {n})
"""


def _range_sets(seed, k=6):
    rng = np.random.default_rng(seed)
    scene = generate_scene(SceneConfig(n_targets=k), rng)
    paths = generate_paths(scene, PathConfig(clutter_rate=2.0), rng)
    rb = OfdmConfig().range_bin
    sets = [[set() for _ in range(4)] for _ in range(4)]
    for p in paths:
        sets[p.tx_bs][p.rx_bs].add(int(p.path_length // rb))
    return [[(np.array(sorted(sets[u][m]), float) + 0.5) * rb for m in range(4)] for u in range(4)]


def bench(repeat):
    rng = np.random.default_rng(0)
    bs = rng.uniform(0, 120, (4, 2))
    t = rng.uniform(0, 120, 2)
    d = np.hypot(*(bs - t).T)
    ranges = d[:, None] + d[None, :] + rng.uniform(-0.375, 0.375, (4, 4))
    grid = np.linspace(0, 120, 61)
    values, offsets = flatten_range_sets(_range_sets(1))
    delta = default_thresholds(OfdmConfig().range_bin, 4).delta

    cases = {
        "nls_objective": (kernels.nls_objective_numpy, kernels.nls_objective_loop, (60.0, 60.0, bs, ranges)),
        "grid_objective": (kernels.grid_objective_numpy, kernels.grid_objective_loop, (grid, grid, bs, ranges)),
        "lm_refine": (kernels.lm_refine_numpy, kernels.lm_refine_loop, (bs, ranges, 60.0, 60.0)),
        "enumerate_tuples": (kernels.enumerate_tuples_numpy, kernels.enumerate_tuples_loop, (values, offsets, 4, delta)),
    }
    label = "numba" if kernels.HAS_NUMBA else "python loop"
    print(f"{'kernel':<18} {'numpy [us]':>12} {label + ' [us]':>18} {'speedup':>8}")
    for name, (np_fn, loop_fn, args) in cases.items():
        loop_fn(*args)  # compile outside the timer
        a = min(timeit.repeat(lambda: np_fn(*args), number=repeat, repeat=3)) / repeat * 1e6
        b = min(timeit.repeat(lambda: loop_fn(*args), number=repeat, repeat=3)) / repeat * 1e6
        print(f"{name:<18} {a:12.1f} {b:18.1f} {a / b:8.1f}x")


def bench_trials(n):
    print(f"\nend to end, K=6, {n} trials")
    for flag in ("0", "1"):
        env = dict(os.environ, NETSENSE_NO_NUMBA=flag)
        out = subprocess.run(
            [sys.executable, "-c", TRIAL_SNIPPET.format(n=n)], env=env, capture_output=True, text=True, check=True
        ).stdout.split()
        backend = "numba" if out[0] == "True" else "numpy"
        print(f"  {backend:<6} {float(out[1]) * 1e3:8.1f} ms/trial")


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--trials", type=int, default=20)
    args = ap.parse_args()
    bench(args.repeat)
    if args.trials:
        bench_trials(args.trials)
