"""Joint data association, NLOS mitigation and clutter suppression.

The central processor receives one ascending range set per ordered BS pair
and must decide which ranges are direct (Type I) echoes of the same target.
The pipeline:

1. :func:`enumerate_candidates` picks one monostatic range per BS and keeps
   the pick only if every bistatic set holds a range matching the implied
   sum distance to within ``delta``;
2. :func:`filter_by_residual` localizes each candidate with damped
   Gauss-Newton and drops those whose fit residual exceeds ``beta``;
3. :func:`select_max_disjoint` keeps the largest family of candidates that
   never reuse the same range.

Range tables are nested lists ``range_sets[u][m]`` of ascending arrays;
association indices are 0-based positions into those arrays.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import kernels
from .geometry import Point2D

__all__ = [
    "Thresholds",
    "SolverConfig",
    "AssociationHypothesis",
    "LocalizationResult",
    "SensingOutput",
    "default_thresholds",
    "nls_objective",
    "initial_position",
    "gauss_newton_localize",
    "localize_ranges",
    "flatten_range_sets",
    "enumerate_candidates",
    "filter_by_residual",
    "merge_duplicates",
    "select_max_disjoint",
    "localize_all",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Thresholds:
    delta: float
    beta: float

    def __post_init__(self):
        if self.delta <= 0 or self.beta <= 0:
            raise ValueError(f"thresholds must be positive, got delta={self.delta}, beta={self.beta}")


def default_thresholds(range_bin: float, n_bs: int) -> Thresholds:
    """One range bin for ``delta`` and ``M^2 * delta^2`` for ``beta``."""
    return Thresholds(range_bin, n_bs * n_bs * range_bin * range_bin)


@dataclass
class SolverConfig:
    mu0: float = 1e-3
    step_tol: float = 1e-6
    max_iter: int = 50
    min_dist: float = 1e-6
    area_side: float = 120.0
    cond_limit: float = 1e8
    grid_divisions: int = 60
    merge_radius: float = 0.1
    mis_method: str = "exact"  # or "greedy"
    expand_matches: bool = True
    max_variants: int = 64
    grid_restart: bool = True


@dataclass(frozen=True)
class AssociationHypothesis:
    indices: np.ndarray  # (M, M) int, position into range_sets[u][m]

    def conflicts_with(self, other: AssociationHypothesis) -> bool:
        return bool(np.any(self.indices == other.indices))

    def ranges(self, range_sets) -> np.ndarray:
        M = self.indices.shape[0]
        out = np.empty((M, M))
        for u in range(M):
            for m in range(M):
                out[u, m] = range_sets[u][m][self.indices[u, m]]
        return out


@dataclass
class LocalizationResult:
    position: Point2D
    residual: float
    hypothesis: AssociationHypothesis | None
    converged: bool
    iterations: int


@dataclass
class SensingOutput:
    k_hat: int
    targets: list[LocalizationResult]
    n_candidates: int = 0
    n_filtered: int = 0
    n_merged: int = 0

    @property
    def positions(self) -> np.ndarray:
        return np.array([t.position for t in self.targets], dtype=float).reshape(-1, 2)


def nls_objective(pos, bs, ranges) -> float:
    """Sum over all ordered pairs of squared sum-distance residuals."""
    return float(kernels.nls_objective(float(pos[0]), float(pos[1]), np.asarray(bs, float), np.asarray(ranges, float)))


def _grid_best(bs, ranges, area_side: float, divisions: int) -> Point2D:
    grid = np.linspace(0.0, area_side, divisions + 1)
    vals = kernels.grid_objective(grid, grid, bs, ranges)
    j, i = np.unravel_index(np.argmin(vals), vals.shape)
    return Point2D(float(grid[i]), float(grid[j]))


def initial_position(bs, ranges, area_side: float = 120.0, cond_limit: float = 1e8, divisions: int = 60) -> Point2D:
    """Starting point for Gauss-Newton.

    Linearized trilateration on circles of radius ``ranges[m, m] / 2``; falls
    back to the best node of a coarse grid over the area when there are fewer
    than three BSs or the linear system is ill-conditioned.
    """
    bs = np.asarray(bs, dtype=float)
    ranges = np.asarray(ranges, dtype=float)
    M = bs.shape[0]
    if M >= 3:
        rho = np.diag(ranges) / 2.0
        A = 2.0 * (bs[0] - bs[1:])
        sq = np.sum(bs * bs, axis=1)
        b = rho[1:] ** 2 - rho[0] ** 2 - sq[1:] + sq[0]
        if np.linalg.cond(A) <= cond_limit:
            sol, *_ = np.linalg.lstsq(A, b, rcond=None)
            return Point2D(float(sol[0]), float(sol[1]))
    return _grid_best(bs, ranges, area_side, divisions)


def gauss_newton_localize(bs, ranges, init, solver: SolverConfig | None = None) -> LocalizationResult:
    solver = solver or SolverConfig()
    x, y, obj, conv, it = kernels.lm_refine(
        np.asarray(bs, dtype=float),
        np.asarray(ranges, dtype=float),
        float(init[0]),
        float(init[1]),
        solver.mu0,
        solver.step_tol,
        solver.max_iter,
        solver.min_dist,
    )
    return LocalizationResult(Point2D(float(x), float(y)), float(obj), None, bool(conv), int(it))


def localize_ranges(bs, ranges, solver: SolverConfig | None = None) -> LocalizationResult:
    """Gauss-Newton from the trilateration start, and also from the best
    coarse-grid node when ``grid_restart`` is set; the lower residual wins.

    The objective has a kink at every BS, so a start on the wrong side of a
    nearby BS can settle in a local minimum.
    """
    solver = solver or SolverConfig()
    bs = np.asarray(bs, dtype=float)
    ranges = np.asarray(ranges, dtype=float)
    init = initial_position(bs, ranges, solver.area_side, solver.cond_limit, solver.grid_divisions)
    best = gauss_newton_localize(bs, ranges, init, solver)
    if solver.grid_restart:
        alt = gauss_newton_localize(bs, ranges, _grid_best(bs, ranges, solver.area_side, solver.grid_divisions), solver)
        if alt.residual < best.residual:
            best = alt
    return best


def flatten_range_sets(range_sets) -> tuple[np.ndarray, np.ndarray]:
    """Concatenate ``range_sets[u][m]`` in ``u * M + m`` order plus offsets."""
    M = len(range_sets)
    parts = [np.asarray(range_sets[u][m], dtype=float) for u in range(M) for m in range(M)]
    offsets = np.zeros(M * M + 1, dtype=np.int64)
    offsets[1:] = np.cumsum([p.size for p in parts])
    values = np.concatenate(parts) if parts else np.zeros(0)
    return values, offsets


def _window_variants(base: np.ndarray, range_sets, delta: float, limit: int) -> list[np.ndarray]:
    """Every combination of in-window bistatic picks for one monostatic tuple.

    The nearest-match tuple ``base`` comes first; alternatives follow in
    ascending order of total deviation from the implied sum distances.
    """
    M = base.shape[0]
    slots, options = [], []
    for u in range(M):
        for m in range(M):
            if u == m:
                continue
            vals = range_sets[u][m]
            implied = range_sets[u][u][base[u, u]] / 2 + range_sets[m][m][base[m, m]] / 2
            lo = np.searchsorted(vals, implied - delta, side="left")
            hi = np.searchsorted(vals, implied + delta, side="right")
            window = [j for j in range(lo, hi) if abs(vals[j] - implied) <= delta]
            if len(window) > 1:
                window.sort(key=lambda j: (abs(vals[j] - implied), vals[j]))
                slots.append((u, m))
                options.append([(abs(vals[j] - implied), j) for j in window])
    if not slots:
        return [base]
    combos = [((), 0.0)]
    for opts in options:
        combos = [(c + (j,), cost + dev) for c, cost in combos for dev, j in opts]
    combos.sort(key=lambda c: c[1])  # stable: nearest-first combo stays first
    out = []
    for combo, _ in combos[:limit]:
        h = base.copy()
        for (u, m), j in zip(slots, combo):
            h[u, m] = j
        out.append(h)
    return out


def enumerate_candidates(
    range_sets, thresholds: Thresholds, expand: bool = True, max_variants: int = 64
) -> list[AssociationHypothesis]:
    """All monostatic pick tuples whose bistatic sums match within ``delta``.

    Each feasible tuple yields its nearest-match hypothesis (ties go to the
    smaller range). With ``expand`` it also yields the hypotheses built from
    the other in-window bistatic ranges, so a range stolen by the nearest
    match can still be given back to its own target during selection.
    Order is lexicographic in the monostatic picks.
    """
    M = len(range_sets)
    values, offsets = flatten_range_sets(range_sets)
    tuples = kernels.enumerate_tuples(values, offsets, M, float(thresholds.delta))
    if not expand:
        return [AssociationHypothesis(t) for t in tuples]
    out = []
    for t in tuples:
        out.extend(AssociationHypothesis(v) for v in _window_variants(t, range_sets, thresholds.delta, max_variants))
    return out


def filter_by_residual(
    candidates: list[AssociationHypothesis],
    bs,
    range_sets,
    thresholds: Thresholds,
    solver: SolverConfig | None = None,
) -> list[LocalizationResult]:
    solver = solver or SolverConfig()
    bs = np.asarray(bs, dtype=float)
    kept = []
    for hyp in candidates:
        ranges = hyp.ranges(range_sets)
        res = localize_ranges(bs, ranges, solver)
        if res.residual <= thresholds.beta:
            res.hypothesis = hyp
            kept.append(res)
    return kept


def merge_duplicates(results: list[LocalizationResult], radius: float) -> list[LocalizationResult]:
    """Collapse non-conflicting results that land within ``radius`` of each other.

    The smaller residual wins; the original order of the survivors is kept.
    """
    if radius <= 0 or len(results) < 2:
        return list(results)
    order = sorted(range(len(results)), key=lambda i: results[i].residual)
    kept: list[int] = []
    for i in order:
        ri = results[i]
        dup = False
        for j in kept:
            rj = results[j]
            close = np.hypot(ri.position[0] - rj.position[0], ri.position[1] - rj.position[1]) <= radius
            if close and not ri.hypothesis.conflicts_with(rj.hypothesis):
                dup = True
                break
        if not dup:
            kept.append(i)
    return [results[i] for i in sorted(kept)]


def _conflict_graph(results) -> list[set[int]]:
    n = len(results)
    adj: list[set[int]] = [set() for _ in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            if results[i].hypothesis.conflicts_with(results[j].hypothesis):
                adj[i].add(j)
                adj[j].add(i)
    return adj


def _exact_mis(adj: list[set[int]], weights: list[float]) -> list[int]:
    """Maximum independent set, ties broken by smallest total weight."""
    best: list = [[], -1, float("inf")]

    def consider(chosen, total):
        size = len(chosen)
        if size > best[1] or (size == best[1] and total < best[2]):
            best[0], best[1], best[2] = list(chosen), size, total

    def rec(cands: set[int], chosen: list[int], total: float):
        reach = len(chosen) + len(cands)
        if reach < best[1] or (reach == best[1] and total >= best[2]):
            return
        if not cands:
            consider(chosen, total)
            return
        v = max(sorted(cands), key=lambda i: len(adj[i] & cands))
        if not adj[v] & cands:
            consider(chosen + sorted(cands), total + sum(weights[i] for i in cands))
            return
        rec(cands - {v} - adj[v], chosen + [v], total + weights[v])
        rec(cands - {v}, chosen, total)

    rec(set(range(len(adj))), [], 0.0)
    return sorted(best[0])


def _greedy_mis(adj: list[set[int]], weights: list[float]) -> list[int]:
    alive = set(range(len(adj)))
    chosen = []
    while alive:
        v = min(sorted(alive), key=lambda i: (len(adj[i] & alive), weights[i]))
        chosen.append(v)
        alive -= adj[v] | {v}
    return sorted(chosen)


def select_max_disjoint(filtered: list[LocalizationResult], method: str = "exact") -> SensingOutput:
    """Largest set of hypotheses that share no range index on any pair."""
    if not filtered:
        return SensingOutput(0, [])
    adj = _conflict_graph(filtered)
    weights = [r.residual for r in filtered]
    if method == "exact":
        idx = _exact_mis(adj, weights)
    elif method == "greedy":
        idx = _greedy_mis(adj, weights)
    else:
        raise ValueError(f"unknown selection method {method!r}")
    chosen = [filtered[i] for i in idx]
    return SensingOutput(len(chosen), chosen)


def localize_all(range_sets, bs, thresholds: Thresholds, solver: SolverConfig | None = None) -> SensingOutput:
    solver = solver or SolverConfig()
    candidates = enumerate_candidates(range_sets, thresholds, solver.expand_matches, solver.max_variants)
    filtered = filter_by_residual(candidates, bs, range_sets, thresholds, solver)
    merged = merge_duplicates(filtered, solver.merge_radius)
    out = select_max_disjoint(merged, solver.mis_method)
    out.n_candidates = len(candidates)
    out.n_filtered = len(filtered)
    out.n_merged = len(merged)
    log.debug("candidates=%d filtered=%d merged=%d selected=%d", len(candidates), len(filtered), len(merged), out.k_hat)
    return out
