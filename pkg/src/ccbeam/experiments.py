"""Offline pipeline and the experiment drivers used by the CLI and scripts."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .beam_map import KeyGenConfig, build_table, calibrate_delta
from .charting import TrainConfig, chart_dataset, init_model, neighborhood_preservation, train
from .features import FEATURE_SETS, normalized_clock, trajectory_features
from .tracker import (ChartSystem, Metrics, TrackerConfig, exhaustive_baseline,
                      reconstruct_next_feature, run_tracker, sliding_window_baseline,
                      timeliness_eval)
from .trajectory import ScenarioConfig, generate_path_sequence, generate_trajectories

log = logging.getLogger(__name__)


@dataclass
class SystemConfig:
    """Offline build settings: chart training plus table construction."""

    train: TrainConfig = field(default_factory=TrainConfig)
    keygen: KeyGenConfig = field(default_factory=KeyGenConfig)
    target_set_size: float = 1.5
    # also file beam b_t under the chart point the tracker will query at step t
    # (decoded from y_{t-1} with the confirmed beams), so jumps seen in training
    # are found from where the tracker actually stands
    replay_entries: bool = True
    calibration_points: int = 2000
    seed: int = 0


def stack_features(trajectories) -> tuple[np.ndarray, np.ndarray]:
    """Feature rows of all trajectories and their trajectory index."""
    feats = [trajectory_features(t) for t in trajectories]
    groups = np.concatenate([np.full(len(f), i) for i, f in enumerate(feats)])
    return np.vstack(feats), groups


def replay_queries(model, traj, features=None) -> np.ndarray:
    """Chart points the tracker queries at steps ``1..n-1`` when every earlier
    step was confirmed on the truth beams; row ``t - 1`` belongs to step ``t``."""
    f = trajectory_features(traj) if features is None else features
    ys = chart_dataset(model, f)
    sc, n = traj.config, len(traj)
    xs = [reconstruct_next_feature(model, ys[t - 1], traj.truth[t - 1], normalized_clock(t, n),
                                   sc.n_tx, sc.n_rx, f[t - 1]) for t in range(1, n)]
    return chart_dataset(model, np.array(xs)) if xs else np.zeros((0, 2))


def table_rows(charts, trajectories, side: str, queries=None):
    """``(points, beams)`` to insert for one side; ``side`` is ``"tx"`` or ``"rx"``.

    ``queries`` holds one replayed-query array per trajectory (see
    ``replay_queries``); each replayed point is filed with that step's beam.
    """
    k = 1 if side == "tx" else 0
    pts, beams, start = [], [], 0
    for i, traj in enumerate(trajectories):
        n = len(traj)
        b = np.array([pair[k] for pair in traj.truth])
        pts.append(charts[start:start + n])
        beams.append(b)
        if queries is not None and n > 1:
            pts.append(queries[i])
            beams.append(b[1:])
        start += n
    return np.vstack(pts), np.concatenate(beams)


def desk_train_config(**kw) -> TrainConfig:
    """Short schedule used by the acceptance run and the scripts: higher step
    size, fewer epochs. The full schedule is ``TrainConfig()``."""
    base = dict(learning_rate=1e-3, epochs=30, loss_weight=10.0)
    base.update(kw)
    return TrainConfig(**base)


def train_chart(trajectories, cfg: TrainConfig):
    feats, groups = stack_features(trajectories)
    model, history = train(feats, cfg, groups)
    return model, history


def build_system(trajectories, cfg: SystemConfig | None = None, model=None):
    """Chart model plus one pair of tables built from ``trajectories``.

    Trains the chart first unless ``model`` is given. All trajectories are
    treated as walks through the same environment. Returns ``(system, info)``.
    """
    cfg = cfg or SystemConfig()
    feats, groups = stack_features(trajectories)
    info = {}
    t0 = time.perf_counter()
    if model is None:
        model, history = train(feats, cfg.train, groups)
        info["history"] = history
    info["train_seconds"] = time.perf_counter() - t0
    charts = chart_dataset(model, feats)
    info["charts"] = charts
    info["features"] = feats
    return tables_for(model, trajectories, charts, cfg), info


def tables_for(model, trajectories, charts, cfg: SystemConfig) -> ChartSystem:
    """Per-side tables plus a delta calibrated on the tracker's replayed queries
    (the training points themselves when replay is off)."""
    sc = trajectories[0].config
    queries = []
    for traj in trajectories:
        queries.append(replay_queries(model, traj))
    replayed = np.vstack(queries)
    calib = replayed if cfg.replay_entries and len(replayed) else charts
    rng = np.random.default_rng(cfg.seed)
    idx = rng.choice(len(calib), min(cfg.calibration_points, len(calib)), replace=False)
    tables, sel = {}, {}
    for side in ("tx", "rx"):
        pts, beams = table_rows(charts, trajectories, side,
                                queries if cfg.replay_entries else None)
        tables[side] = build_table(pts, beams, cfg.keygen, seed=cfg.seed)
        sel[side] = calibrate_delta(tables[side], calib[idx], cfg.target_set_size)
    return ChartSystem(model, tables["tx"], tables["rx"], sel["tx"], sel["rx"], sc.n_tx, sc.n_rx)


def environment_systems(model, trajectories, cfg: SystemConfig | None = None):
    """One system per seeded environment, all sharing the chart model.

    Every seed draws its own scatterer geometry, so beam labels only carry
    meaning inside that environment; the tables are kept per environment.
    """
    cfg = cfg or SystemConfig()
    out = []
    for traj in trajectories:
        charts = chart_dataset(model, trajectory_features(traj))
        out.append(tables_for(model, [traj], charts, cfg))
    return out


def run_standard(trajectories, cfg: SystemConfig | None = None,
                 track_cfg: TrackerConfig | None = None, model=None):
    """Shared chart, per-environment tables, tracker over every trajectory.

    Returns ``(total_metrics, results, model, info)``.
    """
    cfg = cfg or SystemConfig()
    info = {}
    if model is None:
        t0 = time.perf_counter()
        model, info["history"] = train_chart(trajectories, cfg.train)
        info["train_seconds"] = time.perf_counter() - t0
    systems = environment_systems(model, trajectories, cfg)
    total, results = Metrics(), []
    for traj, system in zip(trajectories, systems):
        res = run_tracker(traj, system, track_cfg)
        total += res.metrics
        results.append(res)
    info["systems"] = systems
    return total, results, model, info


def track_all(system: ChartSystem, trajectories, cfg: TrackerConfig | None = None,
              keep_records: bool = False):
    """Run the tracker over every trajectory; returns ``(total_metrics, results)``."""
    total = Metrics()
    results = []
    for traj in trajectories:
        res = run_tracker(traj, system, cfg)
        total += res.metrics
        results.append(res if keep_records else res.metrics)
    return total, results


def baseline_all(trajectories, w: int | None = None) -> Metrics:
    """Sliding window of half-width ``w``; ``None`` means exhaustive."""
    total = Metrics()
    for traj in trajectories:
        res = exhaustive_baseline(traj) if w is None else sliding_window_baseline(traj, w)
        total += res.metrics
    return total


def matched_window(trajectories, target_accuracy: float, w_max: int = 32):
    """Smallest sliding-window half-width reaching ``target_accuracy``.

    Doubles ``w`` until the target is met, then bisects, so the returned width
    always has a failing predecessor (given accuracy grows with ``w``). Returns
    ``(w, metrics)``; if even ``w_max`` falls short, that is returned.
    """
    cache = {}

    def acc(w):
        if w not in cache:
            cache[w] = baseline_all(trajectories, w)
        return cache[w].accuracy

    lo, hi = -1, 0
    while acc(hi) < target_accuracy:
        if hi >= w_max:
            return w_max, cache[w_max]
        lo, hi = hi, min(max(2 * hi, 1), w_max)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if acc(mid) >= target_accuracy:
            hi = mid
        else:
            lo = mid
    return hi, cache[hi]


def chart_quality(model, features, cfg: TrainConfig, k: int = 10) -> tuple[float, float]:
    """Neighbourhood preservation of a trained model and of its random init."""
    cols = FEATURE_SETS[cfg.feature_set]
    init = init_model(len(cols), cfg.hidden, cfg.latent_dim, cfg.seed, cols, model.mean,
                      model.scale)
    x = np.asarray(features, float)
    return (neighborhood_preservation(chart_dataset(model, x), x, k),
            neighborhood_preservation(chart_dataset(init, x), x, k))


def timeliness_series(scenario: ScenarioConfig, k: int, sys_cfg: SystemConfig | None = None,
                      track_cfg: TrackerConfig | None = None):
    """Train on the first of ``k`` successive trajectories and track all ``k``.

    The chart and tables stay frozen unless ``track_cfg.retrain_interval`` is
    positive; then the system is rebuilt from every trajectory seen so far at
    the first trajectory boundary after that many tracked steps.
    Returns per-trajectory ``(E_ps_rate, E_pd_rate)`` arrays.
    """
    track_cfg = track_cfg or TrackerConfig()
    sys_cfg = sys_cfg or SystemConfig(train=desk_train_config())
    trajs = generate_path_sequence(scenario, k)
    system, _ = build_system(trajs[:1], sys_cfg)
    if track_cfg.retrain_interval <= 0:
        ms = timeliness_eval(system, trajs, track_cfg)
    else:
        ms, since = [], 0
        for i, traj in enumerate(trajs):
            if since >= track_cfg.retrain_interval:
                system, _ = build_system(trajs[:i], sys_cfg)
                since = 0
            ms += timeliness_eval(system, [traj], track_cfg)
            since += len(traj)
    return np.array([m.E_ps_rate for m in ms]), np.array([m.E_pd_rate for m in ms])


def standard_trajectories(scenario: ScenarioConfig | None = None, count: int = 100):
    return generate_trajectories(scenario or ScenarioConfig(), count)
