import numpy as np
import pytest

from ccbeam.beam_map import KeyGenConfig
from ccbeam.charting import TrainConfig, chart_dataset, encode
from ccbeam.experiments import (SystemConfig, baseline_all, build_system, chart_quality,
                                matched_window, replay_queries, stack_features, table_rows,
                                timeliness_series)
from ccbeam.features import build_feature, normalized_clock, trajectory_features
from ccbeam.tracker import reconstruct_next_feature
from ccbeam.trajectory import ScenarioConfig, generate_trajectories

SMALL = ScenarioConfig(n_steps=30, n_tx=16, n_rx=16)
FAST = SystemConfig(train=TrainConfig(epochs=3, learning_rate=3e-3, hidden=(16, 8)),
                    keygen=KeyGenConfig(k_res=1))


@pytest.fixture(scope="module")
def trajs():
    return generate_trajectories(SMALL, 3)


@pytest.fixture(scope="module")
def built(trajs):
    return build_system(trajs, FAST)


def test_stack_features_groups(trajs):
    feats, groups = stack_features(trajs)
    assert feats.shape == (90, 5)
    assert list(np.bincount(groups)) == [30, 30, 30]


def test_first_replayed_query_is_the_trackers(trajs, built):
    system, _ = built
    traj = trajs[0]
    x0 = build_feature(traj.snapshots[0], 0.0).as_array()
    x1 = reconstruct_next_feature(system.model, encode(system.model, x0), traj.truth[0],
                                  normalized_clock(1, len(traj)), 16, 16, x0)
    q = replay_queries(system.model, traj)
    assert q.shape == (29, 2)
    assert np.allclose(q[0], encode(system.model, x1))


def test_table_rows_with_and_without_replay(trajs, built):
    system, info = built
    charts = info["charts"]
    pts, beams = table_rows(charts, trajs, "tx")
    assert len(pts) == len(beams) == 90
    assert list(beams[:30]) == [n for _, n in trajs[0].truth]
    q = [replay_queries(system.model, t) for t in trajs]
    pts, beams = table_rows(charts, trajs, "rx", q)
    assert len(pts) == 90 + 3 * 29
    assert list(beams[30:59]) == [m for m, _ in trajs[0].truth[1:]]


def test_delta_calibrated_inside_range(built):
    system, _ = built
    for sel in (system.select_tx, system.select_rx):
        assert sel.delta_min <= sel.delta <= sel.delta_max


def test_matched_window_is_smallest(trajs):
    w, m = matched_window(trajs, 0.9, w_max=8)
    assert m.accuracy >= 0.9
    for smaller in range(w):
        assert baseline_all(trajs, smaller).accuracy < 0.9


def test_exhaustive_baseline_total(trajs):
    m = baseline_all(trajs, None)
    assert m.accuracy == 1.0 and m.N_s == 90 * 32


def test_chart_quality_pair(trajs, built):
    system, info = built
    trained, init = chart_quality(system.model, info["features"], FAST.train)
    assert 0 <= trained <= 1 and 0 <= init <= 1


def test_timeliness_series_shapes():
    eps, epd = timeliness_series(SMALL, 3, FAST)
    assert eps.shape == epd.shape == (3,)
    assert np.all((0 <= epd) & (epd <= 1))
