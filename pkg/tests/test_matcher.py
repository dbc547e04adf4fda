import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from brm.errors import ConfigError
from brm.geo_raster import GeoTransform
from brm.matcher import (
    CandidateSet,
    Matcher,
    MatcherConfig,
    OdometryDelta,
    Phase,
    convergence_check,
    filter_candidates,
    global_match,
    heading,
    propagate,
    residual_grid,
    step,
)
from brm.ratio_map import RatioMapSet
from oracles import FullScanMatcher
from scenarios import IMPOSSIBLE, Scenario, quantised_map, replay, walk_scenario


def mapset(layers, res=1.0, stride=1, origin=(0.0, 0.0)):
    return RatioMapSet.from_arrays(layers, GeoTransform(origin[0], origin[1], res), stride=stride)


def single(cell, pos, parent_pos, ms):
    cols = ms.shape[1]
    return CandidateSet(1, np.array([cell[0] * cols + cell[1]]), np.array([-1]), np.array([0.0]),
                        np.array([pos[0]]), np.array([pos[1]]),
                        np.array([np.nan if parent_pos is None else parent_pos[0]]),
                        np.array([np.nan if parent_pos is None else parent_pos[1]]), Phase.TRACKING)


# --------------------------------------------------------------------------- config

@pytest.mark.parametrize("kw", [dict(e1=0), dict(epsilon=-1), dict(d_max=math.inf), dict(k_cap=0),
                                dict(e1=math.nan)])
def test_config_invariants(kw):
    with pytest.raises(ConfigError):
        MatcherConfig(**kw)


def test_default_config_is_parameter_table():
    c = MatcherConfig()
    assert (c.e1, c.epsilon, c.d_max, c.k_cap, c.continue_after_convergence) == (0.3, 25.0, 75.0, 50_000, True)


def test_odometry_delta_invariants():
    with pytest.raises(ConfigError):
        OdometryDelta(-1.0)
    with pytest.raises(ConfigError):
        OdometryDelta(math.inf)


# --------------------------------------------------------------------------- global search

def test_uniform_map_returns_all_valid_cells():
    v = np.full((6, 7), 0.4, np.float32)
    v[0, :] = np.nan
    ms = mapset([v])
    s = global_match(np.array([np.float32(0.4)]), ms, MatcherConfig())
    assert len(s) == 6 * 7 - 7
    assert s.cells.tolist() == sorted(s.cells.tolist())
    assert (s.parents == -1).all()


def test_three_cell_map_picks_middle():
    ms = mapset([np.array([[0.2, 0.5, 0.9]], np.float32)])
    s = global_match(np.array([0.5]), ms, MatcherConfig(e1=0.05))
    assert s.cells.tolist() == [1]


@given(st.integers(0, 2**32 - 1), st.floats(0.01, 1.0), st.integers(1, 300))
def test_global_match_random_32_map_equals_full_scan(seed, e1, k_cap):
    rng = np.random.default_rng(seed)
    layers = [rng.random((32, 32)).astype(np.float32)]
    f = rng.random(1)
    s = global_match(f, mapset(layers), MatcherConfig(e1=e1, k_cap=k_cap))
    o = FullScanMatcher(layers, 0, 0, 1.0, e1, 1.0, 1.0, k_cap).step(f, 0.0)
    assert s.cells.tolist() == [c.cell for c in o]
    assert s.residuals.tolist() == [c.residual for c in o]


def test_k_cap_ties_break_by_row_major_cell():
    ms = mapset([np.full((4, 4), 0.5, np.float32)])
    s = global_match(np.array([0.5]), ms, MatcherConfig(k_cap=5))
    assert s.cells.tolist() == [0, 1, 2, 3, 4]


def test_feature_length_mismatch_is_error():
    ms = mapset([np.zeros((3, 3), np.float32)] * 2)
    with pytest.raises(ConfigError):
        residual_grid(np.zeros(3), ms)
    with pytest.raises(ConfigError):
        step(CandidateSet(), np.zeros(1), OdometryDelta(0.0), ms, MatcherConfig())


def test_empty_global_result_stays_searching():
    ms = mapset([np.zeros((3, 3), np.float32)])
    s = Matcher(ms).step([1.0])
    assert s.empty and s.phase == Phase.SEARCHING and s.estimate is None


# --------------------------------------------------------------------------- heading

def test_heading_examples():
    assert math.degrees(heading((0, 0), (10, 10))) == pytest.approx(45.0)
    assert heading((0, 0), (-5, 0)) == math.pi
    assert heading((2, 3), (2, 3)) is None


def test_heading_negative_zero_maps_to_pi():
    assert heading((0.0, 0.0), (-1.0, -0.0)) == math.pi


@given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3), st.floats(-1e3, 1e3), st.floats(-1e3, 1e3))
def test_heading_range(ax, ay, bx, by):
    h = heading((ax, ay), (bx, by))
    if (ax, ay) == (bx, by):
        assert h is None
    else:
        assert -math.pi < h <= math.pi


# --------------------------------------------------------------------------- propagation

def test_box_around_predicted_centre():
    ms = mapset([np.zeros((250, 250), np.float32)])
    prev = single((100, 100), (100.0, 100.0), (100.0, 75.0), ms)
    cells, parents = propagate(prev, OdometryDelta(25.0), ms, MatcherConfig(epsilon=25.0))
    rows, cols = np.divmod(cells, 250)
    assert (np.abs(cols - 100) < 25).all() and (np.abs(rows - 125) < 25).all()
    assert cells.size == 49 * 49
    assert (parents == 0).all()


def test_parentless_zero_distance_is_disk():
    ms = mapset([np.zeros((40, 40), np.float32)])
    prev = single((20, 20), (20.0, 20.0), None, ms)
    cells, _ = propagate(prev, OdometryDelta(0.0), ms, MatcherConfig(epsilon=5.0))
    rows, cols = np.divmod(cells, 40)
    expect = {(r, c) for r in range(40) for c in range(40) if math.hypot(r - 20, c - 20) <= 5.0}
    assert set(zip(rows.tolist(), cols.tolist())) == expect


def test_parentless_annulus_equals_full_scan():
    ms = mapset([np.zeros((301, 301), np.float32)], origin=(-150.0, -150.0))
    prev = single((150, 150), (0.0, 0.0), None, ms)
    cells, _ = propagate(prev, OdometryDelta(100.0), ms, MatcherConfig(epsilon=25.0))
    expect = [r * 301 + c for r in range(301) for c in range(301)
              if abs(math.hypot(c - 150, r - 150) - 100.0) <= 25.0]
    assert sorted(cells.tolist()) == expect


def test_coincident_parent_falls_back_to_annulus():
    ms = mapset([np.zeros((40, 40), np.float32)])
    with_parent = single((20, 20), (20.0, 20.0), (20.0, 20.0), ms)
    parentless = single((20, 20), (20.0, 20.0), None, ms)
    cfg = MatcherConfig(epsilon=2.0)
    a, _ = propagate(with_parent, OdometryDelta(6.0), ms, cfg)
    b, _ = propagate(parentless, OdometryDelta(6.0), ms, cfg)
    assert sorted(a.tolist()) == sorted(b.tolist())


def test_propagation_skips_invalid_cells():
    v = np.zeros((30, 30), np.float32)
    v[:, 20:] = np.nan
    ms = mapset([v])
    cells, _ = propagate(single((15, 15), (15.0, 15.0), None, ms), OdometryDelta(8.0), ms,
                         MatcherConfig(epsilon=2.0))
    assert cells.size and (cells % 30 < 20).all()


def test_propagate_empty_set_is_error():
    ms = mapset([np.zeros((3, 3), np.float32)])
    with pytest.raises(ConfigError):
        propagate(CandidateSet(), OdometryDelta(1.0), ms, MatcherConfig())


def test_duplicate_cell_parent_pairs_removed():
    ms = mapset([np.zeros((30, 30), np.float32)])
    # two parentless candidates on the same cell emit the same annulus
    prev = CandidateSet(1, np.array([15 * 30 + 15] * 2), np.array([-1, -1]), np.zeros(2),
                        np.array([15.0, 15.0]), np.array([15.0, 15.0]),
                        np.full(2, np.nan), np.full(2, np.nan), Phase.TRACKING)
    cells, parents = propagate(prev, OdometryDelta(5.0), ms, MatcherConfig(epsilon=1.0))
    assert len(set(cells.tolist())) == cells.size
    assert (parents == 0).all()


# --------------------------------------------------------------------------- filter thresholds

def _propagated(seed, n=3):
    rng = np.random.default_rng(seed)
    layers = [rng.random((24, 24)).astype(np.float32) for _ in range(n)]
    layers[0][0, :] = np.nan
    ms = mapset(layers)
    prev = single((12, 12), (12.0, 12.0), None, ms)
    cells, parents = propagate(prev, OdometryDelta(5.0), ms, MatcherConfig(epsilon=3.0))
    return ms, prev, cells, parents, layers


@given(st.integers(0, 2**32 - 1), st.integers(1, 4), st.floats(0.0, 2.0))
def test_threshold_at_least_n_keeps_every_propagated_cell(seed, n, extra):
    ms, prev, cells, parents, _ = _propagated(seed, n)
    f = np.random.default_rng(seed + 1).random(n)
    out = filter_candidates(cells, parents, f, ms, MatcherConfig(e1=n + extra, k_cap=10**6), prev, 2)
    assert sorted(zip(out.cells.tolist(), out.parents.tolist())) == sorted(zip(cells.tolist(), parents.tolist()))


@given(st.integers(0, 2**32 - 1))
def test_vanishing_threshold_keeps_exact_matches_only(seed):
    ms, prev, cells, parents, layers = _propagated(seed)
    target = int(cells[len(cells) // 2])
    r, c = divmod(target, 24)
    f = np.array([float(v[r, c]) for v in layers])
    out = filter_candidates(cells, parents, f, ms, MatcherConfig(e1=1e-12), prev, 2)
    expect = sorted({int(x) for x in cells if all(float(v.flat[x]) == f[k] for k, v in enumerate(layers))})
    assert sorted(out.cells.tolist()) == expect and target in expect


@given(st.integers(0, 2**32 - 1), st.floats(0.01, 1.5), st.floats(0.01, 1.5))
def test_monotone_in_threshold(seed, a, b):
    a, b = min(a, b), max(a, b)
    ms, prev, cells, parents, _ = _propagated(seed)
    f = np.random.default_rng(seed).random(3)
    lo = filter_candidates(cells, parents, f, ms, MatcherConfig(e1=a, k_cap=10**6), prev, 2)
    hi = filter_candidates(cells, parents, f, ms, MatcherConfig(e1=b, k_cap=10**6), prev, 2)
    assert set(zip(lo.cells.tolist(), lo.parents.tolist())) <= set(zip(hi.cells.tolist(), hi.parents.tolist()))


@given(st.integers(0, 2**32 - 1), st.floats(0.05, 1.5))
def test_filtered_subset_of_propagated_with_stored_residuals(seed, e1):
    ms, prev, cells, parents, _ = _propagated(seed)
    f = np.random.default_rng(seed).random(3)
    out = filter_candidates(cells, parents, f, ms, MatcherConfig(e1=e1, k_cap=10**6), prev, 2)
    assert set(zip(out.cells.tolist(), out.parents.tolist())) <= set(zip(cells.tolist(), parents.tolist()))
    assert (out.residuals < e1).all()
    assert out.residuals.tolist() == residual_grid(f, ms).ravel()[out.cells].tolist()


# --------------------------------------------------------------------------- convergence

def test_convergence_examples():
    est, spread = convergence_check(np.array([0.0, 10.0]), np.array([0.0, 0.0]), 75.0)
    assert est == (5.0, 0.0) and spread == 5.0
    est, spread = convergence_check(np.array([0.0, 100.0]), np.array([0.0, 0.0]), 75.0)
    assert est == (50.0, 0.0) and spread == 50.0
    est, _ = convergence_check(np.array([0.0, 200.0]), np.array([0.0, 0.0]), 75.0)
    assert est is None
    with pytest.raises(ConfigError):
        convergence_check(np.array([]), np.array([]), 1.0)


# --------------------------------------------------------------------------- state machine

def test_first_step_is_global_match():
    layers = quantised_map(np.random.default_rng(3), 16, 16, 2)
    ms = mapset(layers)
    f = np.array([0.4, 0.6])
    s = Matcher(ms, MatcherConfig(e1=0.5)).step(f, 12.0)
    g = global_match(f, ms, MatcherConfig(e1=0.5))
    assert s.cells.tolist() == g.cells.tolist() and s.generation == 1


def test_step_after_empty_is_global_search():
    layers = quantised_map(np.random.default_rng(3), 16, 16, 1)
    ms = mapset(layers)
    cfg = MatcherConfig(e1=0.3, epsilon=1.5, d_max=3.0)
    m = Matcher(ms, cfg)
    m.step([0.4])
    empty = m.step([IMPOSSIBLE], 1.0)
    assert empty.empty and empty.phase == Phase.SEARCHING
    again = m.step([0.6], 1.0)
    assert again.cells.tolist() == global_match(np.array([0.6]), ms, cfg).cells.tolist()
    assert (again.parents == -1).all()


def test_reset_clears_and_next_step_scans_whole_map():
    layers = quantised_map(np.random.default_rng(8), 16, 16, 1)
    ms = mapset(layers)
    cfg = MatcherConfig(e1=0.3, epsilon=1.5, d_max=3.0)
    m = Matcher(ms, cfg)
    m.step([0.4])
    m.step([0.6], 1.0)
    m.reset()
    assert m.state.empty and m.state.phase == Phase.SEARCHING and m.state.generation == 2
    s = m.step([0.2], 1.0)
    assert s.generation == 3
    assert s.cells.tolist() == global_match(np.array([0.2]), ms, cfg).cells.tolist()


def test_converged_estimate_is_centroid_and_freeze_mode():
    v = np.zeros((9, 9), np.float32)
    v[4, 4] = v[4, 5] = 1.0
    ms = mapset([v], res=10.0)
    f = np.array([1.0])
    s = Matcher(ms, MatcherConfig(e1=0.1, d_max=75.0)).step(f)
    assert s.phase == Phase.CONVERGED and s.converged_now and s.estimate == (45.0, 40.0)
    frozen = Matcher(ms, MatcherConfig(e1=0.1, continue_after_convergence=False))
    first = frozen.step(f)
    later = frozen.step([0.0], 10.0)
    assert later.frozen and not later.converged_now and later.generation == 2
    assert later.cells.tolist() == first.cells.tolist() and later.estimate == first.estimate


def test_estimate_survives_loss_of_candidates():
    v = np.zeros((9, 9), np.float32)
    v[4, 4] = 1.0
    ms = mapset([v], res=10.0)
    m = Matcher(ms, MatcherConfig(e1=0.1))
    m.step([1.0])
    s = m.step([0.5], 10.0)
    assert s.empty and s.phase == Phase.SEARCHING and s.estimate == (40.0, 40.0)


def test_three_step_scenario_on_16_map_matches_oracle():
    sc = walk_scenario(np.random.default_rng(16), 16, 16, 3, steps=3, empty_at=())
    replay(sc)


@given(st.integers(0, 2**32 - 1), st.sampled_from([1, 3]), st.sampled_from([5, 60, 400]),
       st.floats(0.2, 0.9), st.floats(0.6, 3.2))
def test_random_walk_scenarios_match_oracle(seed, n, k_cap, e1, eps):
    rng = np.random.default_rng(seed)
    cfg = MatcherConfig(e1=e1, epsilon=eps, d_max=2.5, k_cap=k_cap)
    size = 16 if n == 3 else 20
    replay(walk_scenario(rng, size, size, n, steps=6, empty_at=(3,), cfg=cfg))


def test_oracle_replay_with_coarse_stride_and_reset():
    rng = np.random.default_rng(21)
    sc = walk_scenario(rng, 16, 16, 3, steps=8, empty_at=())
    sc = Scenario(sc.layers, sc.features, [d * 5.0 for d in sc.distances],
                  MatcherConfig(e1=0.45, epsilon=8.0, d_max=12.0, k_cap=300),
                  resolution=0.5, stride=10, reset_before=(5,))
    out = replay(sc)
    assert out["recovered"]


def test_determinism_of_candidate_sequence():
    sc = walk_scenario(np.random.default_rng(5), 20, 20, 3, steps=8)
    ms = mapset(sc.layers)

    def run():
        m = Matcher(ms, sc.cfg)
        return [m.step(f, d).cells.tobytes() for f, d in zip(sc.features, sc.distances)]

    assert run() == run()
