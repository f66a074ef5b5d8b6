"""Online beam tracking on a channel chart, plus reference baselines.

Per step the tracker encodes the current feature vector, looks up candidate
beams per side, scans the candidate product, and falls back to an exhaustive
sweep (with a table update) when even the best candidate pair is below the SNR
threshold. The feature for the next step is rebuilt from the decoder output and
the confirmed beams.

Per-side scan accounting: a step costs ``|B_tx| + |B_rx|`` scans, plus
``N_t + N_r`` when the exhaustive fallback runs.
"""

from __future__ import annotations

import copy
import csv
import logging
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .beam_map import (BeamMapTable, SelectionConfig, lookup_candidates, select_beams,
                       update_table)
from .channel import (beam_center, beam_gains, best_beam_oracle, dft_codebook, nearest_beam,
                      to_db)
from .charting import ChartModel, decode, encode
from .features import build_feature, normalized_clock

log = logging.getLogger(__name__)


@dataclass
class TrackerConfig:
    # None: calibrate per trajectory as median aligned SNR minus threshold_offset_db
    snr_threshold_db: float | None = None
    threshold_offset_db: float = 10.0
    neighbor_radius: int = 1
    t_e: int = 1
    t_d: int = 0
    max_candidates: int = 4
    retrain_interval: int = 0
    update_tables: bool = True

    def __post_init__(self):
        if self.neighbor_radius < 0:
            raise ValueError("neighbor_radius must be >= 0")
        if self.max_candidates < 1:
            raise ValueError("max_candidates must be >= 1")
        if self.t_e < 1 or self.t_d < 0:
            raise ValueError("need t_e >= 1 and t_d >= 0")
        if self.retrain_interval < 0:
            raise ValueError("retrain_interval must be >= 0")


@dataclass
class ChartSystem:
    """Offline artifacts: the chart model and one mapping table per side."""

    model: ChartModel
    table_tx: BeamMapTable
    table_rx: BeamMapTable
    select_tx: SelectionConfig
    select_rx: SelectionConfig
    n_tx: int
    n_rx: int

    def copy(self) -> "ChartSystem":
        return copy.deepcopy(self)


RECORD_COLUMNS = ["t", "located_t", "located_r", "truth_t", "truth_r", "pred_t", "pred_r",
                  "n_cand_t", "n_cand_r", "scans", "e_t", "e_r", "misaligned", "snr_db",
                  "fallback_t", "fallback_r"]


@dataclass
class StepRecord:
    t: int
    located_t: int
    located_r: int
    truth_t: int
    truth_r: int
    pred_t: int
    pred_r: int
    n_cand_t: int
    n_cand_r: int
    scans: int
    e_t: int
    e_r: int
    misaligned: int
    snr_db: float
    fallback_t: int = 0
    fallback_r: int = 0
    cand_t: list = field(default_factory=list, repr=False)
    cand_r: list = field(default_factory=list, repr=False)


@dataclass
class Metrics:
    n_steps: int = 0
    E_ps_t: int = 0
    E_ps_r: int = 0
    E_pd_t: int = 0
    E_pd_r: int = 0
    N_s: int = 0
    N_s_formula: int = 0
    zeta_t: int = 0
    zeta_r: int = 0
    misalignments: int = 0

    @property
    def E_ps(self) -> int:
        return self.E_ps_t + self.E_ps_r

    @property
    def E_pd(self) -> int:
        return self.E_pd_t + self.E_pd_r

    @property
    def accuracy(self) -> float:
        return 1.0 - self.E_pd / (2 * self.n_steps)

    @property
    def E_ps_rate(self) -> float:
        return self.E_ps / (2 * self.n_steps)

    @property
    def E_pd_rate(self) -> float:
        return self.E_pd / (2 * self.n_steps)

    @property
    def mean_scans_per_step(self) -> float:
        """Mean scans per step and per side."""
        return self.N_s / (2 * self.n_steps)

    def add(self, r: StepRecord, n_tx: int, n_rx: int) -> None:
        self.n_steps += 1
        self.E_ps_t += int(r.located_t != r.truth_t)
        self.E_ps_r += int(r.located_r != r.truth_r)
        self.E_pd_t += r.e_t
        self.E_pd_r += r.e_r
        self.N_s += r.scans
        self.N_s_formula += (2 if r.fallback_t else r.n_cand_t) + (2 if r.fallback_r else r.n_cand_r)
        self.zeta_t += r.fallback_t
        self.zeta_r += r.fallback_r
        self.misalignments += r.misaligned

    def __iadd__(self, other: "Metrics"):
        for f in fields(self):
            setattr(self, f.name, getattr(self, f.name) + getattr(other, f.name))
        return self

    def summary(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d.update(E_ps=self.E_ps, E_pd=self.E_pd, accuracy=self.accuracy,
                 E_ps_rate=self.E_ps_rate, E_pd_rate=self.E_pd_rate,
                 mean_scans_per_step=self.mean_scans_per_step)
        return d


def metrics_from_records(records, n_tx: int, n_rx: int) -> Metrics:
    m = Metrics()
    for r in records:
        m.add(r, n_tx, n_rx)
    return m


@dataclass
class TrackResult:
    records: list[StepRecord]
    metrics: Metrics
    threshold_db: float = float("nan")
    new_samples: list = field(default_factory=list)


# -- per-step operations -------------------------------------------------------

def _locate_side(table: BeamMapTable, sel: SelectionConfig, y):
    cands = select_beams(lookup_candidates(table, y), y, sel)
    if cands:
        return cands[0].beam, cands, False
    beam, _ = table.nearest_anchor(y)
    return beam, [], True


def locate(system: ChartSystem, x):
    """Chart position of ``x`` and the located beam per side.

    Returns ``(y, (located_rx, located_tx), (cands_rx, cands_tx), (fallback_rx, fallback_tx))``.
    The located beam is the top-priority survivor of the delta filter; when
    nothing survives, the nearest labelled anchor in the chart is used.
    """
    y = encode(system.model, x)
    if not np.all(np.isfinite(y)):
        raise FloatingPointError(f"non-finite chart coordinate {y}")
    lt, ct, ft = _locate_side(system.table_tx, system.select_tx, y)
    lr, cr, fr = _locate_side(system.table_rx, system.select_rx, y)
    return y, (lr, lt), (cr, ct), (fr, ft)


def candidate_set(located: int, table_hits, n: int, cfg: TrackerConfig) -> list[int]:
    """Located beam, its modular neighbours, then table candidates by priority.

    Neighbours come before table extras so truncation to ``max_candidates``
    never drops the drift cover in favour of a rare jump beam.
    """
    out = [int(located) % n]
    for d in range(1, cfg.neighbor_radius + 1):
        for b in ((located - d) % n, (located + d) % n):
            if b not in out:
                out.append(b)
    for c in table_hits:
        b = c.beam if hasattr(c, "beam") else int(c)
        if b not in out:
            out.append(b)
    return out[:max(cfg.max_candidates, 1)]


def scan_confirm(h: np.ndarray, b_tx, b_rx, cb_tx, cb_rx):
    """Best pair inside ``B_rx x B_tx``; returns ``((m, n), pair_scans, power)``.

    Ties go to the lowest ``(m, n)``, matching the exhaustive oracle.
    """
    b_tx = sorted(set(int(b) for b in b_tx))
    b_rx = sorted(set(int(b) for b in b_rx))
    if not b_tx or not b_rx:
        raise ValueError("candidate sets must be nonempty")
    g = cb_rx.vectors[:, b_rx].conj().T @ h @ cb_tx.vectors[:, b_tx]
    p = np.abs(g) ** 2
    i, j = divmod(int(np.argmax(p)), p.shape[1])
    return (b_rx[i], b_tx[j]), len(b_rx) * len(b_tx), float(p[i, j])


def misalignment_handler(h: np.ndarray, cb_tx, cb_rx, system: ChartSystem | None, y, x,
                         dataset: list | None = None, update: bool = True):
    """Exhaustive sweep; the result is fed back into the tables and the dataset."""
    m, n, p = best_beam_oracle(h, cb_tx, cb_rx)
    if update and system is not None:
        update_table(system.table_tx, y, n)
        update_table(system.table_rx, y, m)
    if dataset is not None:
        dataset.append((np.array(x, float), (m, n)))
    return (m, n), p


def reconstruct_next_feature(model: ChartModel, y, pair, clock: float, n_tx: int, n_rx: int,
                             previous=None) -> np.ndarray:
    """Next full feature vector: decoder output with the azimuths pinned to the
    confirmed beams' DFT centres and the timestamp advanced."""
    x = np.zeros(5) if previous is None else np.array(previous, float).copy()
    x[list(model.columns)] = decode(model, y)
    m, n = pair
    x[0] = beam_center(m, n_rx)
    x[2] = beam_center(n, n_tx)
    x[4] = clock
    return x


def quantize_feature(x, n_tx: int, n_rx: int) -> tuple[int, int]:
    """Nearest DFT indices ``(m, n)`` of the azimuth components of ``x``."""
    return nearest_beam(x[0], n_rx), nearest_beam(x[2], n_tx)


def aligned_snr_db(traj, cb_tx=None, cb_rx=None) -> np.ndarray:
    cfg = traj.config
    cb_tx = cb_tx or dft_codebook(cfg.n_tx, "tx")
    cb_rx = cb_rx or dft_codebook(cfg.n_rx, "rx")
    p = np.array([beam_gains(s.h, cb_tx, cb_rx)[m, n]
                  for s, (m, n) in zip(traj.snapshots, traj.truth)])
    return to_db(p, cfg.noise_var, cfg.tx_power)


def calibrate_threshold(traj, offset_db: float = 10.0) -> float:
    return float(np.median(aligned_snr_db(traj)) - offset_db)


def _initial_record(traj, cb_tx, cb_rx):
    snap = traj.snapshots[0]
    m, n, p = best_beam_oracle(snap.h, cb_tx, cb_rx)
    cfg = traj.config
    tm, tn = traj.truth[0]
    return StepRecord(0, n, m, tn, tm, n, m, cfg.n_tx, cfg.n_rx, cfg.n_tx + cfg.n_rx,
                      int(n != tn), int(m != tm), 0,
                      float(to_db(p, cfg.noise_var, cfg.tx_power)),
                      cand_t=list(range(cfg.n_tx)), cand_r=list(range(cfg.n_rx))), (m, n)


# -- full loops ---------------------------------------------------------------

def run_tracker(traj, system: ChartSystem, cfg: TrackerConfig | None = None,
                threshold_db: float | None = None) -> TrackResult:
    """Track one trajectory. Tables in ``system`` are updated in place on
    misalignment steps unless ``cfg.update_tables`` is off."""
    cfg = cfg or TrackerConfig()
    sc = traj.config
    n_steps = len(traj)
    cb_tx, cb_rx = dft_codebook(sc.n_tx, "tx"), dft_codebook(sc.n_rx, "rx")
    if threshold_db is None:
        threshold_db = (cfg.snr_threshold_db if cfg.snr_threshold_db is not None
                        else calibrate_threshold(traj, cfg.threshold_offset_db))
    metrics = Metrics()
    new_samples = []

    rec, pair = _initial_record(traj, cb_tx, cb_rx)
    records = [rec]
    metrics.add(rec, sc.n_tx, sc.n_rx)
    # initial access measures the full CSI feature
    history = [build_feature(traj.snapshots[0], 0.0).as_array()]
    y_prev = encode(system.model, history[0])
    if n_steps > 1:
        history.append(reconstruct_next_feature(system.model, y_prev, pair,
                                                normalized_clock(1, n_steps), sc.n_tx, sc.n_rx,
                                                history[0]))

    for t in range(1, n_steps):
        hi = len(history) - cfg.t_d
        x_in = np.mean(history[max(0, hi - cfg.t_e):max(hi, 1)], axis=0)
        y, (loc_r, loc_t), (cr, ct), (fr, ft) = locate(system, x_in)
        b_tx = candidate_set(loc_t, ct, sc.n_tx, cfg)
        b_rx = candidate_set(loc_r, cr, sc.n_rx, cfg)
        snap = traj.snapshots[t]
        pair, _, power = scan_confirm(snap.h, b_tx, b_rx, cb_tx, cb_rx)
        snr = float(to_db(power, sc.noise_var, sc.tx_power))
        misaligned = snr < threshold_db
        scans = len(b_tx) + len(b_rx)
        if misaligned:
            pair, power = misalignment_handler(snap.h, cb_tx, cb_rx, system, y, x_in,
                                               new_samples, cfg.update_tables)
            snr = float(to_db(power, sc.noise_var, sc.tx_power))
            scans += sc.n_tx + sc.n_rx
        tm, tn = traj.truth[t]
        rec = StepRecord(t, loc_t, loc_r, tn, tm, pair[1], pair[0], len(b_tx), len(b_rx), scans,
                         int(not misaligned and tn not in b_tx),
                         int(not misaligned and tm not in b_rx),
                         int(misaligned), snr, int(ft), int(fr), b_tx, b_rx)
        records.append(rec)
        metrics.add(rec, sc.n_tx, sc.n_rx)
        if t + 1 < n_steps:
            history.append(reconstruct_next_feature(system.model, y, pair,
                                                    normalized_clock(t + 1, n_steps),
                                                    sc.n_tx, sc.n_rx, history[-1]))
    return TrackResult(records, metrics, threshold_db, new_samples)


def exhaustive_baseline(traj) -> TrackResult:
    sc = traj.config
    cb_tx, cb_rx = dft_codebook(sc.n_tx, "tx"), dft_codebook(sc.n_rx, "rx")
    records, metrics = [], Metrics()
    for t, snap in enumerate(traj.snapshots):
        m, n, p = best_beam_oracle(snap.h, cb_tx, cb_rx)
        tm, tn = traj.truth[t]
        rec = StepRecord(t, n, m, tn, tm, n, m, sc.n_tx, sc.n_rx, sc.n_tx + sc.n_rx,
                         int(tn != n), int(tm != m), 0, float(to_db(p, sc.noise_var, sc.tx_power)))
        records.append(rec)
        metrics.add(rec, sc.n_tx, sc.n_rx)
    return TrackResult(records, metrics)


def _window(center: int, w: int, n: int) -> list[int]:
    if 2 * w + 1 >= n:
        return list(range(n))
    return sorted({(center + d) % n for d in range(-w, w + 1)})


def sliding_window_baseline(traj, w: int) -> TrackResult:
    """Scan ``+-w`` around the previous best beam on each side; no chart, no table."""
    sc = traj.config
    cb_tx, cb_rx = dft_codebook(sc.n_tx, "tx"), dft_codebook(sc.n_rx, "rx")
    rec, pair = _initial_record(traj, cb_tx, cb_rx)
    records, metrics = [rec], Metrics()
    metrics.add(rec, sc.n_tx, sc.n_rx)
    for t in range(1, len(traj)):
        m0, n0 = pair
        b_tx, b_rx = _window(n0, w, sc.n_tx), _window(m0, w, sc.n_rx)
        pair, _, p = scan_confirm(traj.snapshots[t].h, b_tx, b_rx, cb_tx, cb_rx)
        tm, tn = traj.truth[t]
        rec = StepRecord(t, n0, m0, tn, tm, pair[1], pair[0], len(b_tx), len(b_rx),
                         len(b_tx) + len(b_rx), int(tn not in b_tx), int(tm not in b_rx), 0,
                         float(to_db(p, sc.noise_var, sc.tx_power)), cand_t=b_tx, cand_r=b_rx)
        records.append(rec)
        metrics.add(rec, sc.n_tx, sc.n_rx)
    return TrackResult(records, metrics)


def timeliness_eval(system: ChartSystem, trajectories, cfg: TrackerConfig | None = None
                    ) -> list[Metrics]:
    """Track a stream of successive trajectories with a frozen chart and frozen tables."""
    frozen = replace(cfg or TrackerConfig(), update_tables=False)
    return [run_tracker(traj, system, frozen).metrics for traj in trajectories]


# -- CSV -------------------------------------------------------------------------

def write_records_csv(path, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RECORD_COLUMNS)
        for r in records:
            w.writerow([getattr(r, c) if c != "snr_db" else repr(float(r.snr_db))
                        for c in RECORD_COLUMNS])


def read_records_csv(path) -> list[StepRecord]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            kw = {c: int(row[c]) for c in RECORD_COLUMNS if c != "snr_db"}
            out.append(StepRecord(snr_db=float(row["snr_db"]), **kw))
    return out
