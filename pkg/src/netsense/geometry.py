"""Scene geometry and ground-truth propagation paths.

Coordinates are 2D meters. A scene holds ``M`` base stations and ``K``
passive targets; :func:`generate_paths` lists every echo each ordered BS pair
``(u, m)`` sees: direct target reflections (Type I), target reflections with
an extra bounce (Type II) and target-free clutter reflections (Type III).
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

__all__ = [
    "Point2D",
    "Scene",
    "SceneConfig",
    "PathConfig",
    "PathKind",
    "PropagationPath",
    "PathSet",
    "distance",
    "bistatic_distance",
    "generate_scene",
    "generate_paths",
]


class Point2D(NamedTuple):
    x: float
    y: float


@dataclass(frozen=True)
class Scene:
    bs_positions: np.ndarray  # (M, 2)
    target_positions: np.ndarray  # (K, 2)
    area_side: float

    def __post_init__(self):
        bs = np.asarray(self.bs_positions, dtype=float).reshape(-1, 2)
        tg = np.asarray(self.target_positions, dtype=float).reshape(-1, 2)
        object.__setattr__(self, "bs_positions", bs)
        object.__setattr__(self, "target_positions", tg)
        if bs.shape[0] < 1:
            raise ValueError("scene needs at least one base station")

    @property
    def n_bs(self) -> int:
        return self.bs_positions.shape[0]

    @property
    def n_targets(self) -> int:
        return self.target_positions.shape[0]


@dataclass
class SceneConfig:
    n_bs: int = 4
    n_targets: int = 3
    area_side: float = 120.0
    min_bs_separation: float = 10.0
    # both 0 by default: targets are placed uniformly with no exclusion zone
    min_target_separation: float = 0.0
    min_target_bs_distance: float = 0.0
    max_redraws: int = 10_000

    def validate(self) -> None:
        if self.area_side <= 0:
            raise ValueError(f"area_side must be positive, got {self.area_side}")
        if self.n_bs < 2:
            raise ValueError(f"need at least 2 base stations, got {self.n_bs}")
        if self.n_targets < 0:
            raise ValueError(f"n_targets must be >= 0, got {self.n_targets}")


@dataclass
class PathConfig:
    los_drop_prob: float = 0.0
    nlos_rate: float = 1.0
    nlos_bias_min: float = 1.5
    nlos_bias_max: float = 30.0
    clutter_rate: float = 1.0
    clutter_min: float = 5.0
    clutter_max: float = 0.0  # <= 0 means twice the area diagonal
    gain_min: float = 0.5
    gain_max: float = 1.0
    reflection_loss: float = 0.5


class PathKind(enum.Enum):
    TYPE_I = "I"
    TYPE_II = "II"
    TYPE_III = "III"


@dataclass(frozen=True)
class PropagationPath:
    kind: PathKind
    tx_bs: int
    rx_bs: int
    target: int | None
    path_length: float
    nlos_bias: float
    gain: complex


@dataclass
class PathSet:
    paths: list[PropagationPath] = field(default_factory=list)

    def __iter__(self):
        return iter(self.paths)

    def __len__(self):
        return len(self.paths)

    def between(self, u: int, m: int) -> list[PropagationPath]:
        return [p for p in self.paths if p.tx_bs == u and p.rx_bs == m]

    def of_kind(self, kind: PathKind) -> list[PropagationPath]:
        return [p for p in self.paths if p.kind is kind]


def distance(p, q) -> float:
    return math.hypot(q[0] - p[0], q[1] - p[1])


def bistatic_distance(scene: Scene, u: int, m: int, k: int) -> float:
    """Length of the path BS ``u`` -> target ``k`` -> BS ``m``."""
    if not (0 <= u < scene.n_bs and 0 <= m < scene.n_bs):
        raise IndexError(f"BS index out of range: u={u}, m={m}, M={scene.n_bs}")
    if not 0 <= k < scene.n_targets:
        raise IndexError(f"target index {k} out of range for K={scene.n_targets}")
    t = scene.target_positions[k]
    return distance(scene.bs_positions[u], t) + distance(scene.bs_positions[m], t)


def _draw_separated(rng, n, side, min_sep, avoid, min_avoid, max_redraws):
    pts = np.empty((n, 2))
    for i in range(n):
        for _ in range(max_redraws):
            p = rng.uniform(0.0, side, size=2)
            if i and min_sep > 0 and np.min(np.hypot(*(pts[:i] - p).T)) < min_sep:
                continue
            if avoid is not None and len(avoid) and min_avoid > 0 and np.min(np.hypot(*(avoid - p).T)) < min_avoid:
                continue
            break
        else:
            raise RuntimeError(f"could not place point {i} after {max_redraws} redraws")
        pts[i] = p
    return pts


def generate_scene(cfg: SceneConfig, rng: np.random.Generator) -> Scene:
    """Uniform BS and target placement in ``[0, area_side]^2``.

    BSs are redrawn until pairwise at least ``min_bs_separation`` apart;
    targets honour the optional target exclusion distances the same way.
    """
    cfg.validate()
    bs = _draw_separated(rng, cfg.n_bs, cfg.area_side, cfg.min_bs_separation, None, 0.0, cfg.max_redraws)
    targets = _draw_separated(
        rng,
        cfg.n_targets,
        cfg.area_side,
        cfg.min_target_separation,
        bs,
        cfg.min_target_bs_distance,
        cfg.max_redraws,
    )
    return Scene(bs, targets, cfg.area_side)


def _gain(rng, cfg: PathConfig, scale: float = 1.0) -> complex:
    mag = rng.uniform(cfg.gain_min, cfg.gain_max) * scale
    return complex(mag * np.exp(1j * rng.uniform(0.0, 2 * np.pi)))


def generate_paths(scene: Scene, cfg: PathConfig, rng: np.random.Generator) -> PathSet:
    """Draw the ground-truth multipath for every ordered BS pair.

    Type I paths exist for every (u, m, k) unless dropped; a drop removes the
    echo for both (u, m) and (m, u). Type II and Type III counts are Poisson
    per ordered pair and drawn independently for (u, m) and (m, u).
    """
    M, K = scene.n_bs, scene.n_targets
    bs, tg = scene.bs_positions, scene.target_positions
    d = np.hypot(bs[:, None, 0] - tg[None, :, 0], bs[:, None, 1] - tg[None, :, 1])  # (M, K)

    present = np.ones((M, M, K), dtype=bool)
    if cfg.los_drop_prob > 0:
        for u in range(M):
            for m in range(u, M):
                keep = rng.random(K) >= cfg.los_drop_prob
                present[u, m] = keep
                present[m, u] = keep

    clutter_max = cfg.clutter_max if cfg.clutter_max > 0 else 2.0 * math.sqrt(2.0) * scene.area_side
    paths = []
    for u in range(M):
        for m in range(M):
            for k in range(K):
                if present[u, m, k]:
                    paths.append(
                        PropagationPath(PathKind.TYPE_I, u, m, k, float(d[u, k] + d[m, k]), 0.0, _gain(rng, cfg))
                    )
            if K > 0:
                for _ in range(rng.poisson(cfg.nlos_rate)):
                    k = int(rng.integers(K))
                    eta = float(rng.uniform(cfg.nlos_bias_min, cfg.nlos_bias_max))
                    paths.append(
                        PropagationPath(
                            PathKind.TYPE_II,
                            u,
                            m,
                            k,
                            float(d[u, k] + d[m, k]) + eta,
                            eta,
                            _gain(rng, cfg, cfg.reflection_loss),
                        )
                    )
            for _ in range(rng.poisson(cfg.clutter_rate)):
                length = float(rng.uniform(cfg.clutter_min, clutter_max))
                paths.append(
                    PropagationPath(PathKind.TYPE_III, u, m, None, length, 0.0, _gain(rng, cfg, cfg.reflection_loss))
                )
    return PathSet(paths)
