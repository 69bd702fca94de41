"""Hot inner loops of the localization stage.

Every kernel exists twice: a scalar-loop version compiled with numba and a
vectorized numpy version. The module-level names (``nls_objective``,
``grid_objective``, ``lm_refine``, ``enumerate_tuples``) point at the numba
version unless numba is unavailable or ``NETSENSE_NO_NUMBA`` is set.

Range tables are passed as dense ``(M, M)`` float arrays where entry
``[u, m]`` is the range picked from the set of transmitter ``u`` and
receiver ``m``. Range *sets* are passed flattened: ``values`` holds every set
concatenated in ``u * M + m`` order and ``offsets`` (length ``M*M + 1``)
delimits them.
"""
from __future__ import annotations

import numpy as np

from ._accel import HAS_NUMBA, njit

__all__ = [
    "HAS_NUMBA",
    "nls_objective",
    "grid_objective",
    "lm_refine",
    "enumerate_tuples",
]


# --------------------------------------------------------------------------
# sum-distance objective


def nls_objective_numpy(x, y, bs, ranges):
    f = np.hypot(bs[:, 0] - x, bs[:, 1] - y)
    r = f[:, None] + f[None, :] - ranges
    return float(np.sum(r * r))


@njit
def nls_objective_loop(x, y, bs, ranges):
    M = bs.shape[0]
    f = np.empty(M)
    for i in range(M):
        f[i] = np.sqrt((bs[i, 0] - x) ** 2 + (bs[i, 1] - y) ** 2)
    total = 0.0
    for u in range(M):
        for m in range(M):
            r = f[u] + f[m] - ranges[u, m]
            total += r * r
    return total


def grid_objective_numpy(xs, ys, bs, ranges):
    gx, gy = np.meshgrid(xs, ys)
    f = np.hypot(gx[..., None] - bs[:, 0], gy[..., None] - bs[:, 1])
    r = f[..., :, None] + f[..., None, :] - ranges
    return np.sum(r * r, axis=(-2, -1))


@njit
def grid_objective_loop(xs, ys, bs, ranges):
    out = np.empty((ys.shape[0], xs.shape[0]))
    for j in range(ys.shape[0]):
        for i in range(xs.shape[0]):
            out[j, i] = nls_objective_loop(xs[i], ys[j], bs, ranges)
    return out


# --------------------------------------------------------------------------
# damped Gauss-Newton


def lm_refine_numpy(bs, ranges, x0, y0, mu0=1e-3, step_tol=1e-6, max_iter=50, min_dist=1e-6):
    p = np.array([x0, y0], dtype=float)
    obj = nls_objective_numpy(p[0], p[1], bs, ranges)
    mu = mu0
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        diff = p - bs
        f = np.hypot(diff[:, 0], diff[:, 1])
        r = (f[:, None] + f[None, :] - ranges).ravel()
        d = diff / np.maximum(f, min_dist)[:, None]
        J = (d[:, None, :] + d[None, :, :]).reshape(-1, 2)
        step = np.linalg.solve(J.T @ J + mu * np.eye(2), J.T @ r)
        trial = p - step
        obj_trial = nls_objective_numpy(trial[0], trial[1], bs, ranges)
        if obj_trial < obj:
            p = trial
            obj = obj_trial
            mu /= 10.0
        else:
            mu *= 10.0
        if np.hypot(step[0], step[1]) < step_tol:
            converged = True
            break
    return p[0], p[1], obj, converged, it


@njit
def lm_refine_loop(bs, ranges, x0, y0, mu0=1e-3, step_tol=1e-6, max_iter=50, min_dist=1e-6):
    M = bs.shape[0]
    x = x0
    y = y0
    obj = nls_objective_loop(x, y, bs, ranges)
    mu = mu0
    converged = False
    f = np.empty(M)
    dx = np.empty(M)
    dy = np.empty(M)
    it = 0
    while it < max_iter:
        it += 1
        for i in range(M):
            ex = x - bs[i, 0]
            ey = y - bs[i, 1]
            f[i] = np.sqrt(ex * ex + ey * ey)
            fc = max(f[i], min_dist)
            dx[i] = ex / fc
            dy[i] = ey / fc
        a11 = mu
        a12 = 0.0
        a22 = mu
        g1 = 0.0
        g2 = 0.0
        for u in range(M):
            for m in range(M):
                r = f[u] + f[m] - ranges[u, m]
                jx = dx[u] + dx[m]
                jy = dy[u] + dy[m]
                a11 += jx * jx
                a12 += jx * jy
                a22 += jy * jy
                g1 += jx * r
                g2 += jy * r
        det = a11 * a22 - a12 * a12
        sx = (a22 * g1 - a12 * g2) / det
        sy = (a11 * g2 - a12 * g1) / det
        tx = x - sx
        ty = y - sy
        obj_trial = nls_objective_loop(tx, ty, bs, ranges)
        if obj_trial < obj:
            x = tx
            y = ty
            obj = obj_trial
            mu /= 10.0
        else:
            mu *= 10.0
        if np.sqrt(sx * sx + sy * sy) < step_tol:
            converged = True
            break
    return x, y, obj, converged, it


# --------------------------------------------------------------------------
# sum-distance candidate enumeration


def _nearest_numpy(vals, targets, delta):
    """Index of the element of sorted ``vals`` nearest each target, -1 if > delta."""
    if vals.size == 0:
        return np.full(targets.shape, -1, dtype=np.int64)
    hi = np.searchsorted(vals, targets)
    lo = np.clip(hi - 1, 0, vals.size - 1)
    hi = np.clip(hi, 0, vals.size - 1)
    dlo = np.abs(vals[lo] - targets)
    dhi = np.abs(vals[hi] - targets)
    best = np.where(dhi < dlo, hi, lo)
    dist = np.minimum(dlo, dhi)
    return np.where(dist <= delta, best, -1).astype(np.int64)


def enumerate_tuples_numpy(values, offsets, M, delta):
    sizes = np.diff(offsets)
    mono_sizes = [int(sizes[m * M + m]) for m in range(M)]
    if min(mono_sizes) == 0:
        return np.zeros((0, M, M), dtype=np.int64)
    picks = np.indices(mono_sizes).reshape(M, -1)
    halves = np.empty(picks.shape)
    for m in range(M):
        start = offsets[m * M + m]
        halves[m] = values[start + picks[m]] / 2.0
    out = np.empty((picks.shape[1], M, M), dtype=np.int64)
    keep = np.ones(picks.shape[1], dtype=bool)
    for u in range(M):
        out[:, u, u] = picks[u]
        for m in range(M):
            if u == m:
                continue
            k = u * M + m
            idx = _nearest_numpy(values[offsets[k]:offsets[k + 1]], halves[u] + halves[m], delta)
            out[:, u, m] = idx
            keep &= idx >= 0
    return out[keep]


@njit
def _nearest_loop(values, start, stop, target, delta):
    n = stop - start
    if n == 0:
        return -1
    hi = np.searchsorted(values[start:stop], target)
    lo = hi - 1 if hi > 0 else 0
    if hi >= n:
        hi = n - 1
    dlo = abs(values[start + lo] - target)
    dhi = abs(values[start + hi] - target)
    if dhi < dlo:
        return hi if dhi <= delta else -1
    return lo if dlo <= delta else -1


@njit
def enumerate_tuples_loop(values, offsets, M, delta):
    for m in range(M):
        if offsets[m * M + m + 1] - offsets[m * M + m] == 0:
            return np.zeros((0, M, M), dtype=np.int64)
    cap = 64
    buf = np.empty((cap, M, M), dtype=np.int64)
    count = 0
    chosen = np.full((M, M), -1, dtype=np.int64)
    picks = np.full(M, -1, dtype=np.int64)
    level = 0
    while level >= 0:
        picks[level] += 1
        mono = level * M + level
        if picks[level] >= offsets[mono + 1] - offsets[mono]:
            picks[level] = -1
            level -= 1
            continue
        half_m = values[offsets[mono] + picks[level]] / 2.0
        ok = True
        for u in range(level):
            target = values[offsets[u * M + u] + picks[u]] / 2.0 + half_m
            k = u * M + level
            j = _nearest_loop(values, offsets[k], offsets[k + 1], target, delta)
            if j < 0:
                ok = False
                break
            chosen[u, level] = j
            k = level * M + u
            j = _nearest_loop(values, offsets[k], offsets[k + 1], target, delta)
            if j < 0:
                ok = False
                break
            chosen[level, u] = j
        if not ok:
            continue
        chosen[level, level] = picks[level]
        if level == M - 1:
            if count == cap:
                cap *= 2
                grown = np.empty((cap, M, M), dtype=np.int64)
                grown[:count] = buf[:count]
                buf = grown
            buf[count] = chosen
            count += 1
        else:
            level += 1
    return buf[:count].copy()


if HAS_NUMBA:
    nls_objective = nls_objective_loop
    grid_objective = grid_objective_loop
    lm_refine = lm_refine_loop
    enumerate_tuples = enumerate_tuples_loop
else:
    nls_objective = nls_objective_numpy
    grid_objective = grid_objective_numpy
    lm_refine = lm_refine_numpy
    enumerate_tuples = enumerate_tuples_numpy
