"""CSI feature vectors, raw second moments and the chart dissimilarity."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .channel import ChannelSnapshot

FEATURE_NAMES = ("aoa_az", "aod_el", "aod_az", "aoa_el", "tau")

# column subsets accepted by the chart model
FEATURE_SETS = {
    "full": (0, 1, 2, 3, 4),
    "azimuth": (0, 2, 4),
    "elevation": (1, 3, 4),
}


@dataclass(frozen=True)
class FeatureVector:
    aoa_az: float
    aod_el: float
    aod_az: float
    aoa_el: float
    timestamp: float

    def __post_init__(self):
        for name in ("aoa_az", "aod_el", "aod_az", "aoa_el"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} is not finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.aoa_az, self.aod_el, self.aod_az, self.aoa_el, self.timestamp])


@dataclass(frozen=True)
class ScalingParams:
    omega: float = 1.0
    sigma: float = math.inf

    def __post_init__(self):
        if not self.omega > 0:
            raise ValueError("omega must be positive")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    @property
    def beta(self) -> float:
        return 1.0 + 1.0 / (2.0 * self.sigma)


@dataclass
class SecondMoment:
    mat: np.ndarray
    t_count: int


def build_feature(snapshot: ChannelSnapshot, clock: float) -> FeatureVector:
    """Angles of the strongest path plus the normalized timestamp."""
    if not snapshot.paths:
        raise ValueError("snapshot has no paths")
    p = snapshot.dominant
    return FeatureVector(p.theta_r, p.el_t, p.theta_t, p.el_r, float(clock))


def normalized_clock(t: int, n_steps: int) -> float:
    return t / (n_steps - 1) if n_steps > 1 else 0.0


def trajectory_features(traj) -> np.ndarray:
    n = len(traj.snapshots)
    return np.array([build_feature(s, normalized_clock(i, n)).as_array()
                     for i, s in enumerate(traj.snapshots)])


def raw_second_moment(samples) -> SecondMoment:
    """``(1/T) sum_t x_t x_t^H``."""
    xs = [np.asarray(s, dtype=complex).ravel() for s in samples]
    if not xs:
        raise ValueError("need at least one sample")
    if len({x.shape for x in xs}) != 1:
        raise ValueError("samples must have equal lengths")
    X = np.stack(xs)
    mat = X.T @ X.conj() / len(xs)
    return SecondMoment(mat, len(xs))


def scale_r2m(x_bar: SecondMoment, params: ScalingParams) -> SecondMoment:
    """Path-loss compensation: ``Omega^(beta-1) / ||X||_F^beta * X``."""
    norm = np.linalg.norm(x_bar.mat, "fro")
    if norm == 0:
        raise ValueError("zero-norm second moment (degenerate CSI)")
    beta = params.beta
    return SecondMoment(params.omega ** (beta - 1) / norm ** beta * x_bar.mat, x_bar.t_count)


def r2m_vector(samples, params: ScalingParams | None = None) -> np.ndarray:
    """Scaled R2M flattened to a real vector (real and imaginary parts)."""
    sm = raw_second_moment(samples)
    if params is not None:
        sm = scale_r2m(sm, params)
    flat = sm.mat.ravel()
    return np.concatenate([flat.real, flat.imag])


def dissimilarity(y1, y2) -> float:
    y1, y2 = np.asarray(y1, float), np.asarray(y2, float)
    if y1.shape != y2.shape:
        raise ValueError("points must have equal dimension")
    # hypot rescales internally, so tiny separations do not underflow to zero
    return math.hypot(*(y1 - y2).ravel())


FEATURE_CSV_COLUMNS = ["t", "aoa_az", "aod_el", "aod_az", "aoa_el", "tau", "truth_m", "truth_n"]


def write_feature_csv(path, features: np.ndarray, truth) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(FEATURE_CSV_COLUMNS)
        for t, (x, (m, n)) in enumerate(zip(features, truth)):
            w.writerow([t, *(repr(float(v)) for v in x), m, n])


def read_feature_csv(path) -> tuple[np.ndarray, list[tuple[int, int]]]:
    feats, truth = [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            feats.append([float(row[c]) for c in FEATURE_NAMES])
            truth.append((int(row["truth_m"]), int(row["truth_n"])))
    return np.array(feats), truth
