"""Seeded piecewise-stationary UE trajectories.

A trajectory is a walk through a sequence of stationary segments. Inside a
segment every path angle drifts by a bounded uniform increment; at a segment
boundary the link may flip between LOS and NLOS, which blocks the LOS path and
promotes a scatterer to dominant. That flip is what produces abrupt best-beam
jumps.
"""

from __future__ import annotations

import hashlib
import io
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .channel import (ArrayGeometry, ChannelSnapshot, Path, best_beam_oracle,
                      channel_matrix, dft_codebook)


@dataclass
class ScenarioConfig:
    n_steps: int = 200
    step_seconds: float = 1.0
    n_tx: int = 64
    n_rx: int = 64
    n_paths: int = 3
    max_clusters: int = 5
    # 20 m LOS / 45 m NLOS decorrelation distance at 1 m/s
    segment_length_los: int = 20
    segment_length_nlos: int = 45
    angular_drift_rate: float = 0.01
    elevation_spread: float = 0.0
    jump_probability: float = 0.1
    nlos_attenuation: float = 0.1
    nlos_gain: float = 0.5
    scatter_gain_min: float = 0.05
    # keeps a straddled NLOS path (0.5 gain, ~-8 dB two-sided straddle) above any on-grid scatterer
    scatter_gain_max: float = 0.15
    noise_var: float = 0.01
    tx_power: float = 1.0
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.n_steps < 2:
            raise ValueError("n_steps must be >= 2")
        if self.max_clusters < 1:
            raise ValueError("max_clusters must be >= 1")
        if not 1 <= self.n_paths <= self.max_clusters:
            raise ValueError("n_paths must lie in [1, max_clusters]")
        if not 0.0 <= self.jump_probability <= 1.0:
            raise ValueError("jump_probability must lie in [0, 1]")
        if self.angular_drift_rate < 0:
            raise ValueError("angular_drift_rate must be nonnegative")
        if not 0.0 <= self.elevation_spread <= 1.0:
            raise ValueError("elevation_spread must lie in [0, 1]")
        if self.segment_length_los < 1 or self.segment_length_nlos < 1:
            raise ValueError("segment lengths must be >= 1")
        if self.n_tx < 1 or self.n_rx < 1:
            raise ValueError("codebook sizes must be >= 1")
        if self.noise_var < 0:
            raise ValueError("noise_var must be nonnegative")

    def replace(self, **kw) -> "ScenarioConfig":
        d = asdict(self)
        d.update(kw)
        return ScenarioConfig(**d)


@dataclass
class Trajectory:
    snapshots: list[ChannelSnapshot]
    truth: list[tuple[int, int]]
    segment_ids: list[int]
    config: ScenarioConfig
    los: list[bool] = field(default_factory=list)

    def __len__(self):
        return len(self.snapshots)


def _reflect(x: np.ndarray, lo: float, hi: float) -> np.ndarray:
    x = np.where(x > hi, 2 * hi - x, x)
    return np.where(x < lo, 2 * lo - x, x)


class _Walker:
    """Mutable generator state; one walker produces one continuous path."""

    def __init__(self, cfg: ScenarioConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.rng = rng
        L = cfg.n_paths
        self.theta_t = rng.uniform(-1, 1, L)
        self.theta_r = rng.uniform(-1, 1, L)
        s = cfg.elevation_spread
        self.el_t = rng.uniform(-s, s, L)
        self.el_r = rng.uniform(-s, s, L)
        self.phase = rng.uniform(0, 2 * np.pi, L)
        self.base = np.empty(L)
        self.base[0] = 1.0
        self.base[1:] = rng.uniform(cfg.scatter_gain_min, cfg.scatter_gain_max, L - 1)
        self.los = True
        self.promoted = -1
        self.segment_id = 0
        self.t_in_segment = 0

    def magnitudes(self) -> np.ndarray:
        mag = self.base.copy()
        if not self.los:
            mag[0] *= self.cfg.nlos_attenuation
            mag[self.promoted] = self.cfg.nlos_gain
        return mag

    def paths(self) -> list[Path]:
        g = self.magnitudes() * np.exp(1j * self.phase)
        return [Path(complex(g[l]), float(self.theta_t[l]), float(self.theta_r[l]),
                     float(self.el_t[l]), float(self.el_r[l]))
                for l in range(self.cfg.n_paths)]

    def advance(self):
        cfg, rng = self.cfg, self.rng
        L = cfg.n_paths
        r = cfg.angular_drift_rate
        # draw order is fixed so a seed pins the whole walk
        dt = rng.uniform(-r, r, L)
        dr = rng.uniform(-r, r, L)
        self.theta_t = _reflect(self.theta_t + dt, -1.0, 1.0)
        self.theta_r = _reflect(self.theta_r + dr, -1.0, 1.0)
        if cfg.elevation_spread > 0:
            s = cfg.elevation_spread
            self.el_t = _reflect(self.el_t + rng.uniform(-r, r, L), -s, s)
            self.el_r = _reflect(self.el_r + rng.uniform(-r, r, L), -s, s)
        self.t_in_segment += 1
        seg_len = cfg.segment_length_los if self.los else cfg.segment_length_nlos
        if self.t_in_segment >= seg_len:
            self.t_in_segment = 0
            self.segment_id += 1
            u = rng.uniform()
            pick = rng.integers(1, L) if L > 1 else 0
            if L > 1 and u < cfg.jump_probability:
                if self.los:
                    self.los = False
                    self.promoted = int(pick)
                else:
                    self.los = True
                    self.promoted = -1


def _run(walker: _Walker, cfg: ScenarioConfig, cb_tx, cb_rx) -> Trajectory:
    snaps, truth, segs, los = [], [], [], []
    tx = ArrayGeometry("ULA", cfg.n_tx)
    rx = ArrayGeometry("ULA", cfg.n_rx)
    for t in range(cfg.n_steps):
        snap = channel_matrix(walker.paths(), tx, rx, t=t, max_clusters=cfg.max_clusters)
        m, n, _ = best_beam_oracle(snap.h, cb_tx, cb_rx)
        snaps.append(snap)
        truth.append((m, n))
        segs.append(walker.segment_id)
        los.append(walker.los)
        walker.advance()
    return Trajectory(snaps, truth, segs, cfg, los)


def generate_trajectory(config: ScenarioConfig) -> Trajectory:
    config.validate()
    rng = np.random.default_rng(config.seed)
    walker = _Walker(config, rng)
    return _run(walker, config, dft_codebook(config.n_tx, "tx"), dft_codebook(config.n_rx, "rx"))


def generate_trajectories(config: ScenarioConfig, count: int) -> list[Trajectory]:
    """Independent trajectories with seeds ``seed, seed + 1, ...``."""
    return [generate_trajectory(config.replace(seed=config.seed + i)) for i in range(count)]


def generate_path_sequence(config: ScenarioConfig, count: int) -> list[Trajectory]:
    """One continuous walk cut into ``count`` successive trajectories.

    Later pieces wander away from the region the first piece covered, which is
    what the timeliness experiment relies on.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    walker = _Walker(config, rng)
    cb_tx, cb_rx = dft_codebook(config.n_tx, "tx"), dft_codebook(config.n_rx, "rx")
    return [_run(walker, config, cb_tx, cb_rx) for _ in range(count)]


def scripted_blockage(config: ScenarioConfig, jump_step: int, promote: int = 1) -> Trajectory:
    """Drift-only walk whose LOS path is blocked at ``jump_step``.

    Random segment flips are switched off; the single forced flip promotes
    scatterer ``promote`` to dominant from ``jump_step`` on.
    """
    cfg = config.replace(jump_probability=0.0,
                         segment_length_los=config.n_steps, segment_length_nlos=config.n_steps)
    if not 0 < jump_step < cfg.n_steps:
        raise ValueError("jump_step must fall inside the trajectory")
    if not 1 <= promote < cfg.n_paths:
        raise ValueError("promote must index a scatterer")
    rng = np.random.default_rng(cfg.seed)
    walker = _Walker(cfg, rng)
    cb_tx, cb_rx = dft_codebook(cfg.n_tx, "tx"), dft_codebook(cfg.n_rx, "rx")
    head = _run(walker, cfg.replace(n_steps=jump_step), cb_tx, cb_rx)
    walker.los, walker.promoted = False, promote
    walker.segment_id += 1
    tail = _run(walker, cfg.replace(n_steps=cfg.n_steps - jump_step), cb_tx, cb_rx)
    for i, snap in enumerate(tail.snapshots):
        snap.t = jump_step + i
    return Trajectory(head.snapshots + tail.snapshots, head.truth + tail.truth,
                      head.segment_ids + tail.segment_ids, cfg, head.los + tail.los)


def truth_beam_series(traj: Trajectory) -> list[tuple[int, int]]:
    return list(traj.truth)


# -- line-oriented text format ------------------------------------------------

def dump_trajectory(traj: Trajectory) -> str:
    out = io.StringIO()
    out.write("# ccbeam-trajectory v1\n")
    for f in fields(ScenarioConfig):
        out.write(f"# {f.name}={getattr(traj.config, f.name)!r}\n")
    for snap, seg in zip(traj.snapshots, traj.segment_ids):
        cols = [str(snap.t), str(seg), str(len(snap.paths))]
        for p in snap.paths:
            g = complex(p.gain)
            cols += [repr(g.real), repr(g.imag), repr(p.theta_t), repr(p.theta_r),
                     repr(p.el_t), repr(p.el_r)]
        out.write(" ".join(cols) + "\n")
    return out.getvalue()


def write_trajectory(traj: Trajectory, path) -> None:
    with open(path, "w") as fh:
        fh.write(dump_trajectory(traj))


def parse_trajectory(text: str) -> Trajectory:
    cfg_kw = {}
    rows = []
    for line in text.splitlines():
        if not line.strip():
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if "=" in body:
                k, v = body.split("=", 1)
                cfg_kw[k.strip()] = v.strip()
            continue
        rows.append(line.split())
    types = {f.name: f.type for f in fields(ScenarioConfig)}
    kw = {}
    for k, v in cfg_kw.items():
        if k in types:
            kw[k] = int(v) if types[k] == "int" else float(v)
    cfg = ScenarioConfig(**kw) if kw else ScenarioConfig(n_steps=max(len(rows), 2))
    cb_tx, cb_rx = dft_codebook(cfg.n_tx, "tx"), dft_codebook(cfg.n_rx, "rx")
    snaps, truth, segs = [], [], []
    for cols in rows:
        t, seg, L = int(cols[0]), int(cols[1]), int(cols[2])
        vals = [float(c) for c in cols[3:]]
        if len(vals) != 6 * L:
            raise ValueError(f"step {t}: expected {6 * L} path values, got {len(vals)}")
        paths = [Path(complex(vals[6 * l], vals[6 * l + 1]), *vals[6 * l + 2:6 * l + 6])
                 for l in range(L)]
        snap = channel_matrix(paths, cfg.n_tx, cfg.n_rx, t=t)
        m, n, _ = best_beam_oracle(snap.h, cb_tx, cb_rx)
        snaps.append(snap)
        truth.append((m, n))
        segs.append(seg)
    return Trajectory(snaps, truth, segs, cfg)


def read_trajectory(path) -> Trajectory:
    with open(path) as fh:
        return parse_trajectory(fh.read())


def trajectory_digest(traj: Trajectory) -> str:
    return hashlib.sha256(dump_trajectory(traj).encode()).hexdigest()
