"""Array responses, DFT codebooks and the sparse multipath channel."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class ArrayGeometry:
    """ULA with ``n_elements`` antennas, or planar grid with ``(M, N)`` elements.

    ``spacing`` is the element spacing in wavelengths.
    """

    kind: str = "ULA"
    n_elements: int | tuple[int, int] = 64
    spacing: float = 0.5

    def __post_init__(self):
        if self.kind not in ("ULA", "planar"):
            raise ValueError(f"unknown array kind {self.kind!r}")
        if self.kind == "ULA":
            if int(self.n_elements) < 1:
                raise ValueError("n_elements must be >= 1")
        else:
            m, n = self.n_elements
            if m < 1 or n < 1:
                raise ValueError("planar grid dimensions must be >= 1")
        if not self.spacing > 0:
            raise ValueError("spacing must be positive")

    @property
    def size(self) -> int:
        if self.kind == "ULA":
            return int(self.n_elements)
        m, n = self.n_elements
        return m * n


@dataclass(frozen=True)
class Path:
    """One propagation path.

    ``theta_*`` are spatial azimuths (sine space, in [-1, 1]) and ``el_*`` are
    spatial elevations in the same units. A ULA only sees the azimuth; a planar
    array uses ``(theta, el)`` as its two direction cosines.
    """

    gain: complex
    theta_t: float
    theta_r: float
    el_t: float = 0.0
    el_r: float = 0.0

    def __post_init__(self):
        for name in ("theta_t", "theta_r", "el_t", "el_r"):
            v = getattr(self, name)
            if not abs(v) <= 1.0:
                raise ValueError(f"{name}={v} outside [-1, 1]")


@dataclass
class ChannelSnapshot:
    paths: list[Path]
    h: np.ndarray
    t: int = 0

    @property
    def dominant(self) -> Path:
        # first max wins so ties resolve to the lower path index
        mags = [abs(p.gain) for p in self.paths]
        return self.paths[int(np.argmax(mags))]


@dataclass
class Codebook:
    vectors: np.ndarray
    side: str = "tx"

    @property
    def size(self) -> int:
        return self.vectors.shape[1]

    def __getitem__(self, k):
        return self.vectors[:, k]


def array_response(theta: float, geometry: ArrayGeometry | int) -> np.ndarray:
    """Unit-norm ULA steering vector for spatial angle ``theta``."""
    if isinstance(geometry, (int, np.integer)):
        geometry = ArrayGeometry("ULA", int(geometry))
    if geometry.kind != "ULA":
        raise ValueError("array_response needs a ULA geometry")
    if not abs(theta) <= 1.0:
        raise ValueError(f"spatial angle {theta} outside [-1, 1]")
    n = geometry.size
    i = np.arange(n)
    return np.exp(2j * np.pi * i * geometry.spacing * theta) / np.sqrt(n)


def planar_response(alpha: float, phi: float, geometry: ArrayGeometry) -> np.ndarray:
    """Element responses of a planar grid, flattened row-major over (m, n).

    ``alpha`` is the azimuth and ``phi`` the elevation (from broadside), both in
    radians. Elements sit at ``(m * d, n * d)``; the vector is not normalized.
    """
    if geometry.kind != "planar":
        raise ValueError("planar_response needs a planar geometry")
    m_count, n_count = geometry.n_elements
    kd = 2 * np.pi * geometry.spacing
    xm = np.arange(m_count)[:, None]
    yn = np.arange(n_count)[None, :]
    phase = kd * (xm * np.sin(phi) * np.cos(alpha) + yn * np.sin(phi) * np.sin(alpha))
    return np.exp(1j * phase).ravel()


def _steering(theta: float, el: float, geometry: ArrayGeometry) -> np.ndarray:
    if geometry.kind == "ULA":
        return array_response(theta, geometry)
    u, v = theta, el
    r = np.hypot(u, v)
    if r > 1.0 + 1e-12:
        raise ValueError("direction cosines outside the unit disc")
    alpha = np.arctan2(v, u)
    phi = np.arcsin(min(r, 1.0))
    return planar_response(alpha, phi, geometry) / np.sqrt(geometry.size)


def dft_codebook(n: int, side: str = "tx") -> Codebook:
    """Column ``k`` is ``exp(j 2 pi i k / N) / sqrt(N)``."""
    if n < 1:
        raise ValueError("codebook size must be >= 1")
    i = np.arange(n)[:, None]
    k = np.arange(n)[None, :]
    return Codebook(np.exp(2j * np.pi * i * k / n) / np.sqrt(n), side)


def planar_codebook(m: int, n: int, side: str = "tx") -> Codebook:
    """Kronecker product of two DFT codebooks, for a planar (m, n) grid."""
    return Codebook(np.kron(dft_codebook(m).vectors, dft_codebook(n).vectors), side)


def beam_center(k: int, n: int) -> float:
    """Spatial angle steered by DFT column ``k`` of an ``n``-beam codebook (d = lambda/2)."""
    k = int(k) % n
    return 2.0 * k / n if k < n / 2 else 2.0 * (k - n) / n


def nearest_beam(theta: float, n: int) -> int:
    """Inverse of :func:`beam_center`: the DFT column closest to ``theta``."""
    return int(np.floor(theta * n / 2.0 + 0.5)) % n


def channel_matrix(paths: Sequence[Path], tx: ArrayGeometry | int, rx: ArrayGeometry | int,
                   t: int = 0, max_clusters: int | None = None) -> ChannelSnapshot:
    """``H = sum_l beta_l a_r(theta_r) a_t(theta_t)^H`` as an ``N_r x N_t`` matrix."""
    if len(paths) == 0:
        raise ValueError("channel needs at least one path")
    if max_clusters is not None and len(paths) > max_clusters:
        raise ValueError(f"{len(paths)} paths exceed max_clusters={max_clusters}")
    if not isinstance(tx, ArrayGeometry):
        tx = ArrayGeometry("ULA", int(tx))
    if not isinstance(rx, ArrayGeometry):
        rx = ArrayGeometry("ULA", int(rx))
    h = np.zeros((rx.size, tx.size), dtype=complex)
    for p in paths:
        a_r = _steering(p.theta_r, p.el_r, rx)
        a_t = _steering(p.theta_t, p.el_t, tx)
        h += p.gain * np.outer(a_r, a_t.conj())
    return ChannelSnapshot(list(paths), h, t)


def received_signal(h: np.ndarray, f: np.ndarray, w: np.ndarray, x: complex = 1.0,
                    noise_var: float = 0.0, rng: np.random.Generator | None = None) -> complex:
    """``y = w^H H f x + w^H n`` with circular Gaussian ``n``."""
    if noise_var < 0:
        raise ValueError("noise_var must be nonnegative")
    if h.shape != (w.shape[0], f.shape[0]):
        raise ValueError(f"shape mismatch: H {h.shape}, w {w.shape}, f {f.shape}")
    y = np.vdot(w, h @ f) * x
    if noise_var > 0:
        if rng is None:
            raise ValueError("a seeded generator is required when noise_var > 0")
        n = rng.normal(scale=np.sqrt(noise_var / 2), size=(h.shape[0], 2)) @ np.array([1, 1j])
        y = y + np.vdot(w, n)
    return complex(y)


def beam_gains(h: np.ndarray, cb_tx: Codebook, cb_rx: Codebook) -> np.ndarray:
    """``|w_m^H H f_n|^2`` for every pair, indexed ``[m, n]``."""
    g = cb_rx.vectors.conj().T @ h @ cb_tx.vectors
    return np.abs(g) ** 2


def best_beam_oracle(h: np.ndarray, cb_tx: Codebook, cb_rx: Codebook) -> tuple[int, int, float]:
    """Exhaustive argmax ``(m, n, power)``; ties go to the lowest ``(m, n)``."""
    if h.shape != (cb_rx.vectors.shape[0], cb_tx.vectors.shape[0]):
        raise ValueError("codebooks do not match the channel dimensions")
    p = beam_gains(h, cb_tx, cb_rx)
    idx = int(np.argmax(p))
    m, n = divmod(idx, p.shape[1])
    return m, n, float(p[m, n])


def pair_gain(h: np.ndarray, cb_tx: Codebook, cb_rx: Codebook, m: int, n: int) -> float:
    return float(abs(np.vdot(cb_rx[m], h @ cb_tx[n])) ** 2)


def snr_of_pair(h: np.ndarray, cb_tx: Codebook, cb_rx: Codebook, m: int, n: int,
                noise_var: float, tx_power: float = 1.0) -> float:
    """Post-beamforming SNR in dB; ``+inf`` for a noiseless link."""
    if noise_var < 0:
        raise ValueError("noise_var must be nonnegative")
    g = tx_power * pair_gain(h, cb_tx, cb_rx, m, n)
    if noise_var == 0:
        return float("inf")
    if g == 0:
        return float("-inf")
    return 10.0 * np.log10(g / noise_var)


def to_db(power: float | np.ndarray, noise_var: float, tx_power: float = 1.0):
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(tx_power * np.asarray(power) / noise_var)
