import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import CORNERS, exact_ranges, ideal_range_sets, random_case
from netsense.association import (
    AssociationHypothesis,
    LocalizationResult,
    SolverConfig,
    Thresholds,
    default_thresholds,
    enumerate_candidates,
    filter_by_residual,
    gauss_newton_localize,
    initial_position,
    localize_all,
    localize_ranges,
    merge_duplicates,
    nls_objective,
    select_max_disjoint,
)
from netsense.geometry import PathConfig, PathKind, PathSet, PropagationPath, Point2D, Scene, SceneConfig, generate_paths, generate_scene
from netsense.ofdm import OfdmConfig
from netsense.validate import check_output

BIN = OfdmConfig().range_bin
TH = default_thresholds(BIN, 4)


def test_default_thresholds():
    assert TH.delta == pytest.approx(0.749481, abs=1e-6)
    assert TH.beta == pytest.approx(16 * 0.749481**2, rel=1e-6)
    with pytest.raises(ValueError):
        Thresholds(0.0, 1.0)
    with pytest.raises(ValueError):
        Thresholds(1.0, -1.0)


def test_nls_objective_examples():
    t = (30.0, 40.0)
    assert nls_objective(t, CORNERS, exact_ranges(CORNERS, t)) == pytest.approx(0.0, abs=1e-20)
    assert nls_objective((3, 4), [[0, 0]], [[10.0]]) == 0.0
    assert nls_objective((3, 4), [[0, 0]], [[12.0]]) == pytest.approx(4.0)


def test_nls_objective_counts_both_orders():
    bs = [[0.0, 0.0], [10.0, 0.0]]
    r = exact_ranges(bs, (5.0, 5.0))
    r[0, 1] += 1.0
    assert nls_objective((5, 5), bs, r) == pytest.approx(1.0)
    r[1, 0] += 1.0
    assert nls_objective((5, 5), bs, r) == pytest.approx(2.0)


def test_initial_position_examples():
    bs = [[0, 0], [2, 0], [0, 2]]
    r = np.full((3, 3), 2 * math.sqrt(2))
    p = initial_position(bs, r)
    assert p.x == pytest.approx(1.0) and p.y == pytest.approx(1.0)
    bs = [[0, 0], [100, 0], [0, 100]]
    p = initial_position(bs, exact_ranges(bs, (30, 40)))
    assert abs(p.x - 30) <= 1e-9 and abs(p.y - 40) <= 1e-9


def test_initial_position_grid_fallback_is_grid_optimum():
    bs = np.array([[0.0, 10.0], [50.0, 10.0], [100.0, 10.0]])
    r = exact_ranges(bs, (47.0, 71.0))
    p = initial_position(bs, r, area_side=120.0)
    grid = np.linspace(0, 120, 61)
    best = min(nls_objective((x, y), bs, r) for x in grid for y in grid)
    assert p.x in grid and p.y in grid
    assert nls_objective(p, bs, r) == best


def test_initial_position_two_bs_uses_grid():
    bs = np.array([[0.0, 0.0], [100.0, 0.0]])
    p = initial_position(bs, exact_ranges(bs, (40.0, 60.0)))
    assert p.x % 2.0 == 0.0 and p.y % 2.0 == 0.0


def test_gn_converges_from_center():
    res = gauss_newton_localize(CORNERS, exact_ranges(CORNERS, (30, 40)), (50, 50))
    assert math.hypot(res.position.x - 30, res.position.y - 40) <= 1e-6
    assert res.residual <= 1e-10
    assert res.converged


def test_gn_fixed_point():
    res = gauss_newton_localize(CORNERS, exact_ranges(CORNERS, (30, 40)), (30, 40))
    assert res.iterations <= 1 and res.converged
    assert (res.position.x, res.position.y) == pytest.approx((30, 40), abs=1e-12)


def test_gn_iteration_cap():
    res = gauss_newton_localize(CORNERS, exact_ranges(CORNERS, (30, 40)), (50, 50), SolverConfig(max_iter=1))
    assert res.iterations == 1 and not res.converged


@pytest.mark.parametrize("seed", range(20))
def test_gn_within_one_percent_of_grid_minimum(seed):
    rng = np.random.default_rng(seed)
    t = rng.uniform(10, 90, 2)
    r = exact_ranges(CORNERS, t) + rng.uniform(-0.375, 0.375, (4, 4))
    res = gauss_newton_localize(CORNERS, r, initial_position(CORNERS, r))
    g = np.arange(-1.0, 1.0 + 1e-9, 0.01)
    gx, gy = np.meshgrid(t[0] + g, t[1] + g)
    f = np.hypot(gx[..., None] - CORNERS[:, 0], gy[..., None] - CORNERS[:, 1])
    grid_min = np.sum((f[..., :, None] + f[..., None, :] - r) ** 2, axis=(-2, -1)).min()
    assert res.residual <= 1.01 * grid_min


def test_gn_at_bs_position_is_finite():
    r = exact_ranges(CORNERS, (0.0, 0.0))
    res = gauss_newton_localize(CORNERS, r, (0.0, 0.0))
    assert np.isfinite(res.residual) and np.isfinite(res.position.x)


def test_grid_restart_escapes_local_minimum():
    # target 3.9 m from a BS: the trilateration start sits across the kink
    bs = np.array([[62.59, 39.99], [117.82, 92.1], [99.09, 72.23], [34.73, 16.92]])
    r = (np.floor(exact_ranges(bs, (92.22, 69.14)) / BIN) + 0.5) * BIN
    single = gauss_newton_localize(bs, r, initial_position(bs, r))
    best = localize_ranges(bs, r)
    assert best.residual < 0.5 * single.residual
    assert math.hypot(best.position.x - 92.22, best.position.y - 69.14) <= 0.375
    no_restart = localize_ranges(bs, r, SolverConfig(grid_restart=False))
    assert no_restart.residual == single.residual


def _two_bs_sets(cross):
    return [[np.array([10.0]), np.array([cross])], [np.array([cross]), np.array([14.0])]]


def test_enumerate_hand_example():
    th = Thresholds(0.75, 1.0)
    hyps = enumerate_candidates(_two_bs_sets(12.1), th)
    assert len(hyps) == 1 and hyps[0].indices.tolist() == [[0, 0], [0, 0]]
    assert enumerate_candidates(_two_bs_sets(20.0), th) == []


def test_enumerate_empty_monostatic():
    sets = _two_bs_sets(12.1)
    sets[1][1] = np.zeros(0)
    assert enumerate_candidates(sets, Thresholds(0.75, 1.0)) == []


def test_enumerate_requires_both_orders():
    sets = _two_bs_sets(12.1)
    sets[1][0] = np.array([30.0])
    assert enumerate_candidates(sets, Thresholds(0.75, 1.0)) == []


def test_enumerate_nearest_match_and_tie_to_smaller():
    sets = [[np.array([10.0]), np.array([11.5, 12.0, 12.5])], [np.array([11.8, 12.2]), np.array([14.0])]]
    th = Thresholds(0.75, 1.0)
    base = enumerate_candidates(sets, th, expand=False)
    assert len(base) == 1
    assert base[0].indices[0, 1] == 1  # 12.0 exactly
    assert base[0].indices[1, 0] == 0  # 11.8 and 12.2 tie, smaller wins
    variants = enumerate_candidates(sets, th, expand=True)
    assert variants[0].indices.tolist() == base[0].indices.tolist()
    # 3 in-window options on (0,1) times 2 on (1,0)
    assert len(variants) == 6
    assert len({v.indices.tobytes() for v in variants}) == 6


def test_enumerate_contains_ground_truth_noiseless():
    for seed in range(30):
        rng = np.random.default_rng(seed)
        scene = generate_scene(SceneConfig(n_bs=4, n_targets=3, min_target_separation=10.0), rng)
        paths = generate_paths(scene, PathConfig(nlos_rate=0, clutter_rate=0), rng)
        sets = ideal_range_sets(paths, 4)
        hyps = {h.indices.tobytes() for h in enumerate_candidates(sets, TH, expand=False)}
        assert len(hyps) >= 3
        for k in range(3):
            truth = np.empty((4, 4), dtype=np.int64)
            ok = True
            for u in range(4):
                for m in range(4):
                    d = np.hypot(*(scene.bs_positions[u] - scene.target_positions[k])) + np.hypot(
                        *(scene.bs_positions[m] - scene.target_positions[k])
                    )
                    j = np.argmin(np.abs(sets[u][m] - d))
                    truth[u, m] = j
            # nearest match may prefer another target's bin when two targets sit in adjacent bins
            mono = tuple(truth[m, m] for m in range(4))
            got = [np.frombuffer(h, dtype=np.int64).reshape(4, 4) for h in hyps]
            assert any(tuple(g[m, m] for m in range(4)) == mono for g in got)


def test_filter_keeps_truth_and_drops_ghost():
    r = exact_ranges(CORNERS, (30, 40))
    q = np.round(r / BIN - 0.5) * BIN + 0.5 * BIN
    sets = [[np.array([q[u, m]]) for m in range(4)] for u in range(4)]
    hyp = AssociationHypothesis(np.zeros((4, 4), dtype=np.int64))
    kept = filter_by_residual([hyp], CORNERS, sets, TH)
    assert len(kept) == 1 and kept[0].residual < 1.0
    ghost = [[np.array([q[u, m] + (8.0 if (u, m) in {(0, 1), (1, 0)} else 0.0)]) for m in range(4)] for u in range(4)]
    assert filter_by_residual([hyp], CORNERS, ghost, TH) == []
    assert filter_by_residual([], CORNERS, sets, TH) == []


def _res(rows, residual=1.0, pos=(0.0, 0.0)):
    return LocalizationResult(Point2D(*pos), residual, AssociationHypothesis(np.array(rows, dtype=np.int64)), True, 1)


def test_select_two_disjoint():
    out = select_max_disjoint([_res([[0, 0], [0, 0]]), _res([[1, 1], [1, 1]])])
    assert out.k_hat == 2


def test_select_conflict_keeps_smaller_residual():
    a = _res([[0, 0], [0, 0]], 2.0)
    b = _res([[1, 0], [1, 1]], 1.0)
    out = select_max_disjoint([a, b])
    assert out.k_hat == 1 and out.targets[0] is b


def _brute_force_mis(results):
    n = len(results)
    for size in range(n, 0, -1):
        best = None
        for sub in itertools.combinations(range(n), size):
            if all(not results[i].hypothesis.conflicts_with(results[j].hypothesis) for i, j in itertools.combinations(sub, 2)):
                total = sum(results[i].residual for i in sub)
                if best is None or total < best[0]:
                    best = (total, sub)
        if best:
            return size, best[0]
    return 0, 0.0


def test_select_star():
    hub = _res([[0, 0], [0, 0]], 0.1)
    # each leaf shares a different slot with the hub and nothing with the others
    leaves = [_res([[0, 1], [1, 1]], 1.0), _res([[2, 0], [2, 2]], 1.0), _res([[3, 3], [0, 3]], 1.0)]
    out = select_max_disjoint([hub] + leaves)
    assert out.k_hat == 3 == _brute_force_mis([hub] + leaves)[0]
    assert all(any(t is leaf for leaf in leaves) for t in out.targets)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 11), st.integers(0, 2**31), st.integers(2, 4))
def test_select_matches_brute_force(n, seed, values):
    rng = np.random.default_rng(seed)
    results = [_res(rng.integers(0, values, (2, 2)), float(rng.uniform(0, 5))) for _ in range(n)]
    size, total = _brute_force_mis(results)
    out = select_max_disjoint(results)
    assert out.k_hat == size
    assert sum(t.residual for t in out.targets) == pytest.approx(total)
    greedy = select_max_disjoint(results, "greedy")
    assert greedy.k_hat <= size
    for a, b in itertools.combinations(greedy.targets, 2):
        assert not a.hypothesis.conflicts_with(b.hypothesis)


def test_select_unknown_method():
    with pytest.raises(ValueError):
        select_max_disjoint([_res([[0]])], "magic")


def test_merge_duplicates():
    a = _res([[0, 0], [0, 0]], 2.0, (10.0, 10.0))
    b = _res([[1, 1], [1, 1]], 1.0, (10.05, 10.0))
    c = _res([[0, 1], [1, 1]], 0.5, (10.0, 10.02))  # conflicts with both, never merged
    merged = merge_duplicates([a, b, c], 0.1)
    assert merged == [b, c]
    assert merge_duplicates([a, b], 0.0) == [a, b]


def _bins_separated(scene, gap=3):
    # every pair of targets at least ``gap`` range bins apart in every set
    bs, tg = scene.bs_positions, scene.target_positions
    d = np.hypot(bs[:, None, 0] - tg[None, :, 0], bs[:, None, 1] - tg[None, :, 1])
    bins = np.floor((d[:, None, :] + d[None, :, :]) / BIN)
    diff = np.abs(bins[..., :, None] - bins[..., None, :])
    k = tg.shape[0]
    return bool(np.all(diff[..., ~np.eye(k, dtype=bool)] >= gap))


def test_localize_all_noiseless_three_targets():
    done, errors = 0, []
    for seed in range(200):
        rng = np.random.default_rng(seed)
        scene = generate_scene(SceneConfig(n_bs=4, n_targets=3, min_target_separation=20.0, min_target_bs_distance=5.0), rng)
        if not _bins_separated(scene):
            continue
        done += 1
        paths = generate_paths(scene, PathConfig(nlos_rate=0, clutter_rate=0), rng)
        sets = ideal_range_sets(paths, 4)
        out = localize_all(sets, scene.bs_positions, TH)
        assert out.k_hat == 3
        errors += [np.min(np.hypot(*(out.positions - t).T)) for t in scene.target_positions]
        assert check_output(sets, out.targets, TH.delta, TH.beta, scene.bs_positions) == []
    assert done >= 10
    # quantization alone can push a poorly conditioned estimate just past one
    # bin; the strict per-estimate bound is exercised by the acceptance suite
    errors = np.array(errors)
    assert np.mean(errors <= 0.75) >= 0.99 and errors.max() <= 1.0


def test_clutter_only_gives_nothing():
    zero = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        scene = generate_scene(SceneConfig(n_bs=4, n_targets=0), rng)
        sets = ideal_range_sets(generate_paths(scene, PathConfig(clutter_rate=2.0), rng), 4)
        zero += localize_all(sets, scene.bs_positions, TH).k_hat == 0
    assert zero >= 95


def test_nlos_rejected_los_kept():
    rng = np.random.default_rng(1)
    scene = Scene(CORNERS, np.array([[35.0, 62.0]]), 100.0)
    paths = list(generate_paths(scene, PathConfig(nlos_rate=0, clutter_rate=0), rng))
    for u in range(4):
        for m in range(4):
            los = next(p for p in paths if (p.tx_bs, p.rx_bs) == (u, m))
            bias = 3.0 + 2.0 * ((u + m) % 3)
            paths.append(PropagationPath(PathKind.TYPE_II, u, m, 0, los.path_length + bias, bias, 0.3))
    sets = ideal_range_sets(PathSet(paths), 4)
    out = localize_all(sets, CORNERS, TH)
    assert out.k_hat == 1
    assert math.hypot(*(out.positions[0] - [35.0, 62.0])) <= 0.75
    idx = out.targets[0].hypothesis.indices
    assert np.all(idx == 0)  # the shorter, line-of-sight range in every set


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 5))
def test_output_invariants(seed, k):
    scene, sets = random_case(seed, k=k)
    out = localize_all(sets, scene.bs_positions, TH)
    assert check_output(sets, out.targets, TH.delta, TH.beta, scene.bs_positions) == []
    assert out.k_hat <= min(len(sets[u][m]) for u in range(4) for m in range(4))
    assert out.n_candidates >= out.n_filtered >= out.n_merged >= out.k_hat


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(2, 5))
def test_monotone_in_thresholds(seed, k):
    scene, sets = random_case(seed, k=k)
    solver = SolverConfig(merge_radius=0.0)
    ks = [localize_all(sets, scene.bs_positions, Thresholds(d * BIN, b * TH.beta), solver).k_hat
          for d, b in [(0.5, 1.0), (1.0, 1.0), (1.5, 1.0)]]
    assert ks == sorted(ks)
    kb = [localize_all(sets, scene.bs_positions, Thresholds(BIN, b * TH.beta), solver).k_hat for b in (0.25, 1.0, 4.0)]
    assert kb == sorted(kb)


def test_deterministic():
    scene, sets = random_case(5, k=4)
    a = localize_all(sets, scene.bs_positions, TH)
    b = localize_all(sets, scene.bs_positions, TH)
    np.testing.assert_array_equal(a.positions, b.positions)
    assert [t.hypothesis.indices.tolist() for t in a.targets] == [t.hypothesis.indices.tolist() for t in b.targets]
