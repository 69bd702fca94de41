"""Shared test fixtures that bypass Phase I for speed."""
import math

import numpy as np

from netsense.geometry import PathConfig, Scene, SceneConfig, generate_paths, generate_scene
from netsense.ofdm import OfdmConfig


def ideal_range_sets(paths, n_bs, cfg=OfdmConfig()):
    """What a perfect sparse recovery would report: bin midpoints of every path."""
    table = [[set() for _ in range(n_bs)] for _ in range(n_bs)]
    for p in paths:
        table[p.tx_bs][p.rx_bs].add(math.floor(p.path_length / cfg.range_bin))
    return [[(np.array(sorted(table[u][m]), dtype=float) + 0.5) * cfg.range_bin for m in range(n_bs)] for u in range(n_bs)]


def random_case(seed, k=3, m=4, nlos=1.0, clutter=1.0, sep=0.0):
    rng = np.random.default_rng(seed)
    scene = generate_scene(SceneConfig(n_bs=m, n_targets=k, min_target_separation=sep), rng)
    paths = generate_paths(scene, PathConfig(nlos_rate=nlos, clutter_rate=clutter), rng)
    return scene, ideal_range_sets(paths, m)


CORNERS = np.array([[0.0, 0.0], [100.0, 0.0], [0.0, 100.0], [100.0, 100.0]])


def exact_ranges(bs, target):
    d = np.hypot(*(np.asarray(bs) - np.asarray(target)).T)
    return d[:, None] + d[None, :]


__all__ = ["ideal_range_sets", "random_case", "CORNERS", "exact_ranges", "Scene"]
