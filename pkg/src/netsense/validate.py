"""Post-hoc feasibility check of a sensing output.

Deliberately shares no code with the association pipeline: it re-reads the
range sets and the reported hypotheses/positions and re-derives every
constraint from scratch with plain ``math``.
"""
from __future__ import annotations

import math

__all__ = ["check_output"]


def _sum_distance_residual(pos, bs, picked) -> float:
    d = [math.hypot(pos[0] - b[0], pos[1] - b[1]) for b in bs]
    M = len(bs)
    return sum((d[u] + d[m] - picked[u][m]) ** 2 for u in range(M) for m in range(M))


def check_output(range_sets, targets, delta: float, beta: float, bs=None, atol: float = 1e-9) -> list[str]:
    """Return a list of violated constraints; empty means feasible.

    ``targets`` is a sequence of objects with ``hypothesis.indices``,
    ``residual`` and ``position``. When ``bs`` is given the residual is
    recomputed at the reported position instead of trusted.
    """
    problems = []
    M = len(range_sets)
    picks = []
    for k, tgt in enumerate(targets):
        idx = tgt.hypothesis.indices
        bad = False
        for u in range(M):
            for m in range(M):
                g = int(idx[u][m])
                if not 0 <= g < len(range_sets[u][m]):
                    problems.append(f"target {k}: index {g} outside set ({u},{m}) of size {len(range_sets[u][m])}")
                    bad = True
        if bad:
            picks.append(None)
            continue
        picked = [[float(range_sets[u][m][int(idx[u][m])]) for m in range(M)] for u in range(M)]
        picks.append(idx)
        for u in range(M):
            for m in range(M):
                if u == m:
                    continue
                implied = picked[u][u] / 2 + picked[m][m] / 2
                if abs(implied - picked[u][m]) > delta + atol:
                    problems.append(
                        f"target {k}: sum distance on ({u},{m}) off by {abs(implied - picked[u][m]):.4f} > {delta}"
                    )
        resid = tgt.residual if bs is None else _sum_distance_residual(tgt.position, bs, picked)
        if bs is not None and not math.isclose(resid, tgt.residual, rel_tol=1e-6, abs_tol=1e-9):
            problems.append(f"target {k}: reported residual {tgt.residual} but position gives {resid}")
        if resid > beta + atol:
            problems.append(f"target {k}: residual {resid:.4f} exceeds beta {beta}")
    for a in range(len(picks)):
        for b in range(a + 1, len(picks)):
            if picks[a] is None or picks[b] is None:
                continue
            for u in range(M):
                for m in range(M):
                    if int(picks[a][u][m]) == int(picks[b][u][m]):
                        problems.append(f"targets {a} and {b} share range {int(picks[a][u][m])} of set ({u},{m})")
    return problems
