"""Per-receiver sparse channel recovery and range extraction.

Each receiving BS solves

    minimize_h  0.5 * ||y - A h||^2 + lam * ||h||_1,   A = sqrt(p) * G~

with a monotone accelerated proximal-gradient method, keeps the taps whose
magnitude survives a relative threshold, and turns each surviving delay into
the midpoint of its range bin.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, aslinearoperator

from .ofdm import OfdmConfig, dictionary_operator

__all__ = [
    "LassoParams",
    "SparseChannelEstimate",
    "lasso_solve",
    "kkt_violation",
    "spectral_norm_sq",
    "extract_support",
    "taps_to_ranges",
    "debias",
    "PhaseOneResult",
    "phase_one",
    "dump_range_records",
]


@dataclass
class LassoParams:
    alpha: float = 0.1
    max_iters: int = 2000
    step_tol: float = 1e-8
    kkt_tol_rel: float = 1e-3
    support_tau: float = 0.1
    check_every: int = 5
    # lam used verbatim when set; otherwise alpha * ||A^H y||_inf
    lam: float | None = None

    def validate(self) -> None:
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not 0 < self.support_tau < 1:
            raise ValueError(f"support_tau must lie in (0, 1), got {self.support_tau}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass
class SparseChannelEstimate:
    h: np.ndarray  # (M_tx, L) for one receiver
    lam: float
    converged: bool
    iterations: int
    kkt_residual: float
    objective: float
    objective_trace: list[float] = field(default_factory=list, repr=False)


def _as_operator(A) -> LinearOperator:
    if isinstance(A, LinearOperator):
        return A
    return aslinearoperator(np.atleast_2d(np.asarray(A, dtype=complex)))


def spectral_norm_sq(A, iters: int = 200, rtol: float = 1e-7, seed: int = 0) -> float:
    """Largest eigenvalue of ``A^H A`` by power iteration."""
    op = _as_operator(A)
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(op.shape[1]) + 1j * rng.standard_normal(op.shape[1])
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(iters):
        w = op.rmatvec(op.matvec(v))
        new = float(np.linalg.norm(w))
        if new == 0.0:
            return 0.0
        v = w / new
        if abs(new - est) <= rtol * new:
            est = new
            break
        est = new
    return est


def _soft(x: np.ndarray, thr: float) -> np.ndarray:
    mag = np.abs(x)
    scale = np.maximum(mag - thr, 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(mag > thr, x * (scale / np.where(mag > 0, mag, 1.0)), 0.0)


def kkt_violation(A, y, h, lam) -> float:
    """Largest breach of the LASSO optimality conditions at ``h``.

    With ``c = A^H (y - A h)``: off the support ``|c_j| <= lam``, on the
    support ``|c_j| = lam``.
    """
    op = _as_operator(A)
    h = np.ravel(h)
    c = op.rmatvec(np.ravel(y) - op.matvec(h))
    mag = np.abs(c)
    on = h != 0
    off_err = np.max(mag[~on] - lam, initial=0.0)
    on_err = np.max(np.abs(mag[on] - lam), initial=0.0)
    return float(max(off_err, on_err, 0.0))


def lasso_solve(A, y, params: LassoParams | None = None, lipschitz: float | None = None) -> SparseChannelEstimate:
    """Solve the complex LASSO for one observation.

    ``A`` is a dense matrix or :class:`~scipy.sparse.linalg.LinearOperator`
    already carrying the ``sqrt(p)`` factor. Stops once the KKT certificate
    holds to ``kkt_tol_rel * lam`` and the last accepted step is shorter
    than ``step_tol * ||h||``; otherwise returns the best iterate after
    ``max_iters`` with ``converged=False``.
    """
    params = params or LassoParams()
    op = _as_operator(A)
    y = np.ravel(np.asarray(y, dtype=complex))
    n = op.shape[1]

    aty = op.rmatvec(y)
    lam = params.lam if params.lam is not None else params.alpha * float(np.max(np.abs(aty), initial=0.0))
    x = np.zeros(n, dtype=complex)
    if lam <= 0 or not np.any(aty):
        return SparseChannelEstimate(x, lam, True, 0, 0.0, 0.5 * float(np.vdot(y, y).real))

    lip = lipschitz if lipschitz is not None else spectral_norm_sq(op)
    lip *= 1.01
    tol = params.kkt_tol_rel * lam

    def objective(r, h):
        return 0.5 * float(np.vdot(r, r).real) + lam * float(np.sum(np.abs(h)))

    Ax = np.zeros_like(y)
    F = objective(y, x)
    trace = [F]
    z_y, Az_y = x, Ax  # extrapolated point and its image
    t = 1.0
    polishing = False
    converged = False
    kkt = math.inf
    it = 0
    for it in range(1, params.max_iters + 1):
        grad = -op.rmatvec(y - Az_y)
        z = _soft(z_y - grad / lip, lam / lip)
        Az = op.matvec(z)
        Fz = objective(y - Az, z)
        if Fz <= F:
            t_next = 1.0 if polishing else 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
            x_prev, Ax_prev = x, Ax
            x, Ax, F = z, Az, Fz
            z_y = x + ((t - 1.0) / t_next) * (x - x_prev)
            Az_y = Ax + ((t - 1.0) / t_next) * (Ax - Ax_prev)
            t = t_next
            step = float(np.linalg.norm(x - x_prev)) / max(float(np.linalg.norm(x)), 1e-300)
        else:
            # objective went up: drop momentum and restart from x
            z_y, Az_y = x, Ax
            t = 1.0
            step = math.inf
        trace.append(F)
        if step < params.step_tol or it % params.check_every == 0:
            c = op.rmatvec(y - Ax)
            mag = np.abs(c)
            on = x != 0
            kkt = max(
                float(np.max(mag[~on] - lam, initial=0.0)),
                float(np.max(np.abs(mag[on] - lam), initial=0.0)),
                0.0,
            )
            if kkt <= tol:
                if step < params.step_tol:
                    converged = True
                    break
                # certificate holds: finish with plain proximal-gradient steps
                polishing = True
                t = 1.0
                z_y, Az_y = x, Ax
    return SparseChannelEstimate(x, lam, converged, it, kkt, F, trace)


def extract_support(h: np.ndarray, params: LassoParams | None = None, n_tx: int | None = None) -> dict[int, np.ndarray]:
    """Delay taps per transmitter whose magnitude exceeds ``tau * max|h|``.

    ``h`` is the stacked estimate for one receiver, either ``(M, L)`` or flat
    with ``n_tx`` given. Returns ``{u: sorted 0-based taps}``.
    """
    params = params or LassoParams()
    h = np.asarray(h)
    if h.ndim == 1:
        h = h.reshape(n_tx or 1, -1)
    mag = np.abs(h)
    peak = float(np.max(mag, initial=0.0))
    if peak <= 1e-300:
        return {u: np.zeros(0, dtype=np.int64) for u in range(h.shape[0])}
    keep = mag > params.support_tau * peak
    return {u: np.flatnonzero(keep[u]) for u in range(h.shape[0])}


def taps_to_ranges(taps, cfg: OfdmConfig) -> np.ndarray:
    """Bin-midpoint range for each 0-based delay tap, sorted and deduplicated."""
    taps = np.asarray(taps, dtype=np.int64).ravel()
    if taps.size and (taps.min() < 0 or taps.max() >= cfg.n_taps):
        raise ValueError(f"tap index out of [0, {cfg.n_taps}): {taps.min()}..{taps.max()}")
    return np.unique((taps + 0.5) * cfg.range_bin)


def debias(A, y, support: np.ndarray) -> np.ndarray:
    """Least-squares refit of the gains on a fixed support (flat column indices)."""
    op = _as_operator(A)
    support = np.asarray(support, dtype=np.int64)
    out = np.zeros(op.shape[1], dtype=complex)
    if support.size == 0:
        return out
    eye = np.zeros((op.shape[1], support.size), dtype=complex)
    eye[support, np.arange(support.size)] = 1.0
    cols = op.matmat(eye)
    coef, *_ = np.linalg.lstsq(cols, np.ravel(y), rcond=None)
    out[support] = coef
    return out


@dataclass
class PhaseOneResult:
    range_sets: list[list[np.ndarray]]  # [u][m] ascending ranges
    estimates: list[SparseChannelEstimate]  # per receiver m
    supports: list[dict[int, np.ndarray]]  # per receiver m


def phase_one(
    observations: np.ndarray,
    symbols: np.ndarray,
    params: LassoParams,
    cfg: OfdmConfig,
) -> PhaseOneResult:
    """Solve one LASSO per receiver and split its support by transmitter."""
    observations = np.atleast_2d(observations)
    symbols = np.atleast_2d(symbols)
    M = symbols.shape[0]
    if observations.shape[0] != M:
        raise ValueError(f"expected {M} observations, got {observations.shape[0]}")
    op = dictionary_operator(symbols, cfg, math.sqrt(cfg.power))
    lip = spectral_norm_sq(op)
    table: list[list[np.ndarray]] = [[np.zeros(0) for _ in range(M)] for _ in range(M)]
    estimates, supports = [], []
    for m in range(M):
        est = lasso_solve(op, observations[m], params, lipschitz=lip)
        est.h = est.h.reshape(M, cfg.n_taps)
        sup = extract_support(est.h, params)
        for u in range(M):
            table[u][m] = taps_to_ranges(sup[u], cfg)
        estimates.append(est)
        supports.append(sup)
    return PhaseOneResult(table, estimates, supports)


def dump_range_records(result: PhaseOneResult, stream) -> None:
    """Write one JSON line per ordered pair with its tap profile and ranges."""
    M = len(result.range_sets)
    for m in range(M):
        est = result.estimates[m]
        for u in range(M):
            taps = result.supports[m][u]
            record = {
                "tx": u,
                "rx": m,
                "lam": est.lam,
                "converged": est.converged,
                "taps": taps.tolist(),
                "magnitudes": np.abs(est.h[u, taps]).round(6).tolist(),
                "ranges": np.round(result.range_sets[u][m], 6).tolist(),
            }
            stream.write(json.dumps(record) + "\n")
