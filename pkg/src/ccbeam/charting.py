"""Triplet autoencoder that maps CSI features onto a 2-D channel chart.

Everything is plain numpy with hand-written backprop and Adam, so runs are
bit-reproducible for a fixed seed.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .features import FEATURE_SETS, FeatureVector

log = logging.getLogger(__name__)

MODEL_FORMAT = "ccbeam-chart"
MODEL_VERSION = 1


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 256
    epochs: int = 200
    delta: float = 1.0
    loss_weight: float = 1.0
    pos_window: int = 2
    neg_window: int = 10
    hidden: tuple[int, ...] = (256, 64)
    latent_dim: int = 2
    feature_set: str = "full"
    seed: int = 0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        self.validate()

    def validate(self):
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if not self.neg_window > self.pos_window >= 1:
            raise ValueError("need neg_window > pos_window >= 1")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if self.feature_set not in FEATURE_SETS:
            raise ValueError(f"unknown feature_set {self.feature_set!r}")
        if self.latent_dim >= len(FEATURE_SETS[self.feature_set]):
            raise ValueError("latent_dim must be smaller than the input dimension")


@dataclass
class ChartModel:
    """Encoder/decoder weight stacks. Weights are ``(fan_in, fan_out)``."""

    encoder: list[tuple[np.ndarray, np.ndarray]]
    decoder: list[tuple[np.ndarray, np.ndarray]]
    mean: np.ndarray
    scale: np.ndarray
    columns: tuple[int, ...] = FEATURE_SETS["full"]
    activation: str = "tanh"

    @property
    def input_dim(self) -> int:
        return self.encoder[0][0].shape[0]

    @property
    def latent_dim(self) -> int:
        return self.encoder[-1][0].shape[1]

    @property
    def dims(self) -> list[int]:
        return [self.input_dim] + [w.shape[1] for w, _ in self.encoder + self.decoder]

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in self.encoder + self.decoder:
            out += [w, b]
        return out

    def set_params(self, flat: list[np.ndarray]) -> None:
        it = iter(flat)
        self.encoder = [(next(it), next(it)) for _ in self.encoder]
        self.decoder = [(next(it), next(it)) for _ in self.decoder]

    def copy(self) -> "ChartModel":
        return ChartModel([(w.copy(), b.copy()) for w, b in self.encoder],
                          [(w.copy(), b.copy()) for w, b in self.decoder],
                          self.mean.copy(), self.scale.copy(), tuple(self.columns),
                          self.activation)

    # -- input handling --------------------------------------------------------

    def select(self, x) -> np.ndarray:
        """Pick the model's input columns out of full 5-dim feature rows."""
        if isinstance(x, FeatureVector):
            x = x.as_array()
        x = np.asarray(x, dtype=float)
        if x.shape[-1] == self.input_dim:
            return x
        if x.shape[-1] == 5:
            return x[..., list(self.columns)]
        raise ValueError(f"feature dimension {x.shape[-1]} does not match input_dim {self.input_dim}")

    def standardize(self, x) -> np.ndarray:
        return (self.select(x) - self.mean) / self.scale


_ACTIVATIONS = {
    "tanh": (np.tanh, lambda h: 1.0 - h * h),
}


def _forward(layers, x, act):
    """Returns the output and every layer's post-activation for backprop."""
    f, _ = _ACTIVATIONS[act]
    hs = [x]
    h = x
    last = len(layers) - 1
    for i, (w, b) in enumerate(layers):
        h = h @ w + b
        if i < last:
            h = f(h)
        hs.append(h)
    return h, hs


def _backward(layers, hs, grad_out, act):
    _, df = _ACTIVATIONS[act]
    grads = [None] * (2 * len(layers))
    g = grad_out
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        if i < len(layers) - 1:
            g = g * df(hs[i + 1])
        grads[2 * i] = hs[i].T @ g
        grads[2 * i + 1] = g.sum(axis=0)
        g = g @ w.T
    return grads, g


def init_model(input_dim: int, hidden=(256, 64), latent_dim: int = 2, seed: int = 0,
               columns=None, mean=None, scale=None) -> ChartModel:
    """Glorot-uniform weights, zero biases, decoder mirrors the encoder."""
    rng = np.random.default_rng(seed)
    enc_dims = [input_dim, *hidden, latent_dim]
    dec_dims = enc_dims[::-1]

    def stack(dims):
        layers = []
        for a, b in zip(dims[:-1], dims[1:]):
            lim = np.sqrt(6.0 / (a + b))
            layers.append((rng.uniform(-lim, lim, (a, b)), np.zeros(b)))
        return layers

    enc = stack(enc_dims)
    dec = stack(dec_dims)
    if columns is None:
        columns = FEATURE_SETS["full"] if input_dim == 5 else tuple(range(input_dim))
    mean = np.zeros(input_dim) if mean is None else np.asarray(mean, float)
    scale = np.ones(input_dim) if scale is None else np.asarray(scale, float)
    return ChartModel(enc, dec, mean, scale, tuple(columns))


def encode_std(model: ChartModel, xs: np.ndarray) -> np.ndarray:
    return _forward(model.encoder, xs, model.activation)[0]


def decode_std(model: ChartModel, ys: np.ndarray) -> np.ndarray:
    return _forward(model.decoder, ys, model.activation)[0]


def encode(model: ChartModel, x) -> np.ndarray:
    """Chart coordinates of one feature vector (or a batch of rows)."""
    return encode_std(model, model.standardize(x))


def decode(model: ChartModel, y) -> np.ndarray:
    """Reconstructed feature vector(s) in the model's input columns, original units."""
    y = np.asarray(y, dtype=float)
    if y.shape[-1] != model.latent_dim:
        raise ValueError("chart point has the wrong dimension")
    return decode_std(model, y) * model.scale + model.mean


def chart_dataset(model: ChartModel, features) -> np.ndarray:
    return encode(model, np.atleast_2d(np.asarray(features, float)))


# -- losses --------------------------------------------------------------------

def _safe_norm(d):
    n = np.sqrt((d * d).sum(axis=-1))
    return n, np.where(n > 0, n, 1.0)


def triplet_hinge(ya, yp, yn, delta: float) -> float:
    """Mean of ``max(0, |ya - yp| - |ya - yn| + delta)`` over the rows."""
    dp = np.linalg.norm(ya - yp, axis=-1)
    dn = np.linalg.norm(ya - yn, axis=-1)
    return float(np.maximum(dp - dn + delta, 0.0).mean())


def triplet_loss(model: ChartModel, features, triplets, delta: float = 1.0) -> float:
    triplets = np.asarray(triplets, dtype=int).reshape(-1, 3)
    if len(triplets) == 0:
        raise ValueError("empty triplet batch")
    y = encode(model, features)
    return triplet_hinge(y[triplets[:, 0]], y[triplets[:, 1]], y[triplets[:, 2]], delta)


def reconstruction_loss(model: ChartModel, features) -> float:
    """Mean squared round-trip error, measured on standardized features."""
    xs = model.standardize(np.atleast_2d(np.asarray(features, float)))
    if len(xs) == 0:
        raise ValueError("empty batch")
    r = xs - decode_std(model, encode_std(model, xs))
    return float((r * r).sum(axis=1).mean())


def loss_and_grad(model: ChartModel, xa, xp, xn, xr, delta: float, weight: float = 1.0):
    """Value and gradient of ``C_n + weight * C_r`` on standardized batches.

    ``xa, xp, xn`` are anchor/positive/negative rows; ``xr`` is the batch the
    reconstruction term is averaged over. Gradients follow ``model.params()``.
    """
    act = model.activation
    B = len(xa)
    y, hs = _forward(model.encoder, np.concatenate([xa, xp, xn]), act)
    ya, yp, yn = y[:B], y[B:2 * B], y[2 * B:]
    dap = ya - yp
    dan = ya - yn
    np_, np_safe = _safe_norm(dap)
    nn_, nn_safe = _safe_norm(dan)
    s = np_ - nn_ + delta
    active = (s > 0).astype(float)[:, None]
    cn = float(np.maximum(s, 0).mean())
    up = dap / np_safe[:, None]
    un = dan / nn_safe[:, None]
    gya = active * (up - un) / B
    gyp = -active * up / B
    gyn = active * un / B
    g_enc_t, _ = _backward(model.encoder, hs, np.concatenate([gya, gyp, gyn]), act)

    z, hz = _forward(model.encoder, xr, act)
    xh, hd = _forward(model.decoder, z, act)
    r = xr - xh
    cr = float((r * r).sum(axis=1).mean())
    g_dec, gz = _backward(model.decoder, hd, -2.0 * weight * r / len(xr), act)
    g_enc_r, _ = _backward(model.encoder, hz, gz, act)

    grads = [a + b for a, b in zip(g_enc_t, g_enc_r)] + g_dec
    return cn + weight * cr, cn, cr, grads


def total_loss(model: ChartModel, xa, xp, xn, xr, delta: float, weight: float = 1.0) -> float:
    ya, yp, yn = (encode_std(model, v) for v in (xa, xp, xn))
    r = xr - decode_std(model, encode_std(model, xr))
    return triplet_hinge(ya, yp, yn, delta) + weight * float((r * r).sum(axis=1).mean())


def gradient_check(model: ChartModel, xa, xp, xn, xr, delta: float = 1.0, weight: float = 1.0,
                   directions: int = 10, eps: float = 1e-6, seed: int = 0) -> float:
    """Worst relative gap between the analytic directional derivative and a
    central difference, over random unit directions in parameter space."""
    _, _, _, grads = loss_and_grad(model, xa, xp, xn, xr, delta, weight)
    base = [p.copy() for p in model.params()]
    rng = np.random.default_rng(seed)
    probe = model.copy()
    worst = 0.0
    for _ in range(directions):
        v = [rng.normal(size=p.shape) for p in base]
        norm = np.sqrt(sum(float((d * d).sum()) for d in v))
        v = [d / norm for d in v]
        probe.set_params([p + eps * d for p, d in zip(base, v)])
        up = total_loss(probe, xa, xp, xn, xr, delta, weight)
        probe.set_params([p - eps * d for p, d in zip(base, v)])
        down = total_loss(probe, xa, xp, xn, xr, delta, weight)
        numeric = (up - down) / (2 * eps)
        analytic = sum(float((g * d).sum()) for g, d in zip(grads, v))
        worst = max(worst, abs(numeric - analytic) / max(abs(numeric), abs(analytic), 1e-8))
    return worst


# -- triplet mining --------------------------------------------------------------

def _group_bounds(n: int, groups):
    if groups is None:
        return np.zeros(n, int), np.full(n, n)
    groups = np.asarray(groups)
    if len(groups) != n:
        raise ValueError("groups must align with the dataset")
    change = np.flatnonzero(np.diff(groups) != 0) + 1
    starts = np.concatenate([[0], change])
    ends = np.concatenate([change, [n]])
    lens = ends - starts
    return np.repeat(starts, lens), np.repeat(ends, lens)


def mine_triplets(features, cfg: TrainConfig, rng: np.random.Generator | None = None,
                  groups=None, max_attempts: int = 10) -> np.ndarray:
    """One ``(anchor, positive, negative)`` row per usable anchor.

    Positives come from ``|i - j| <= pos_window`` inside the anchor's group
    (trajectory). Negatives are drawn uniformly from the whole dataset minus the
    anchor's ``neg_window`` neighbourhood in its own group, so other
    trajectories supply negatives too. Negatives closer in feature space than
    the positive are redrawn up to ``max_attempts`` times; anchors that still
    fail are dropped.
    """
    x = np.asarray(features, float)
    n = len(x)
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    if n <= cfg.neg_window + 1:
        raise ValueError(f"dataset of {n} rows too short for neg_window={cfg.neg_window}")
    lo, hi = _group_bounds(n, groups)
    i = np.arange(n)
    Wp, Wn = cfg.pos_window, cfg.neg_window

    p_lo = np.maximum(lo, i - Wp)
    p_hi = np.minimum(hi - 1, i + Wp)
    p_count = p_hi - p_lo  # excludes the anchor itself
    e_lo = np.maximum(lo, i - Wn)
    e_len = np.minimum(hi - 1, i + Wn) - e_lo + 1
    n_count = n - e_len
    ok = (p_count > 0) & (n_count > 0)
    i = i[ok]
    p_lo, p_count, e_lo, e_len, n_count = p_lo[ok], p_count[ok], e_lo[ok], e_len[ok], n_count[ok]

    u = (rng.random(len(i)) * p_count).astype(int)
    j = p_lo + u
    j = np.where(j >= i, j + 1, j)
    dp = np.linalg.norm(x[i] - x[j], axis=1)

    k = np.full(len(i), -1)
    pending = np.ones(len(i), bool)
    for _ in range(max_attempts):
        idx = np.flatnonzero(pending)
        if len(idx) == 0:
            break
        v = (rng.random(len(idx)) * n_count[idx]).astype(int)
        cand = np.where(v < e_lo[idx], v, v + e_len[idx])
        good = np.linalg.norm(x[i[idx]] - x[cand], axis=1) >= dp[idx]
        k[idx[good]] = cand[good]
        pending[idx[good]] = False
    keep = k >= 0
    return np.stack([i[keep], j[keep], k[keep]], axis=1)


# -- training --------------------------------------------------------------------

@dataclass
class TrainHistory:
    total: list[float] = field(default_factory=list)
    triplet: list[float] = field(default_factory=list)
    reconstruction: list[float] = field(default_factory=list)


class _Adam:
    def __init__(self, params, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def standardization(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    # constant columns (e.g. elevations of a ULA scenario) pass through unscaled
    scale = np.where(scale > 1e-12, scale, 1.0)
    return mean, scale


def train(features, cfg: TrainConfig, groups=None, model: ChartModel | None = None):
    """Minimize ``C_n + loss_weight * C_r`` with mini-batch Adam.

    ``features`` are full 5-dim rows (or rows already restricted to the chosen
    feature set); ``groups`` marks trajectory membership: positives stay inside
    one trajectory and the negative exclusion window is taken within it. Returns ``(model, history)``.
    """
    cfg.validate()
    x_all = np.asarray(features, float)
    cols = FEATURE_SETS[cfg.feature_set]
    x = x_all[:, list(cols)] if x_all.shape[1] == 5 and len(cols) != 5 else x_all
    if model is None:
        mean, scale = standardization(x)
        model = init_model(x.shape[1], cfg.hidden, cfg.latent_dim, cfg.seed, cols, mean, scale)
    else:
        model = model.copy()
    history = TrainHistory()
    if cfg.epochs == 0:
        return model, history
    xs = (x - model.mean) / model.scale
    rng = np.random.default_rng(cfg.seed + 1)
    params = model.params()
    opt = _Adam(params, cfg.learning_rate)
    for epoch in range(cfg.epochs):
        trip = mine_triplets(xs, cfg, rng, groups)
        trip = trip[rng.permutation(len(trip))]
        tot = cn_sum = cr_sum = 0.0
        for s in range(0, len(trip), cfg.batch_size):
            b = trip[s:s + cfg.batch_size]
            xa = xs[b[:, 0]]
            loss, cn, cr, grads = loss_and_grad(model, xa, xs[b[:, 1]], xs[b[:, 2]], xa,
                                                cfg.delta, cfg.loss_weight)
            if not np.isfinite(loss):
                raise FloatingPointError(
                    f"training diverged at epoch {epoch}, batch {s // cfg.batch_size}: "
                    f"loss={loss} (C_n={cn}, C_r={cr}); try a smaller learning_rate")
            opt.step(params, grads)
            tot += loss * len(b)
            cn_sum += cn * len(b)
            cr_sum += cr * len(b)
        nb = max(len(trip), 1)
        history.total.append(tot / nb)
        history.triplet.append(cn_sum / nb)
        history.reconstruction.append(cr_sum / nb)
        if epoch % 25 == 0 or epoch == cfg.epochs - 1:
            log.debug("epoch %d loss %.5f (C_n %.5f, C_r %.5f)", epoch, history.total[-1],
                      history.triplet[-1], history.reconstruction[-1])
    return model, history


# -- quality ----------------------------------------------------------------------

def _knn_sets(points: np.ndarray, k: int) -> np.ndarray:
    tree = cKDTree(points)
    _, idx = tree.query(points, k=k + 1)
    out = np.empty((len(points), k), dtype=int)
    for i, row in enumerate(idx):
        row = row[row != i]
        out[i] = row[:k]
    return out


def neighborhood_preservation(chart, features, k: int = 10) -> float:
    """Mean fraction of each point's k feature-space neighbours kept in the chart."""
    chart = np.asarray(chart, float)
    features = np.asarray(features, float)
    if not k < len(chart):
        raise ValueError("k must be smaller than the dataset size")
    a = _knn_sets(chart, k)
    b = _knn_sets(features, k)
    hits = [len(np.intersect1d(r, s, assume_unique=True)) for r, s in zip(a, b)]
    return float(np.mean(hits) / k)


# -- serialization --------------------------------------------------------------

def model_to_dict(model: ChartModel) -> dict:
    def layers(ls):
        return [{"w": w.tolist(), "b": b.tolist()} for w, b in ls]

    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "dims": model.dims,
        "activation": model.activation,
        "columns": list(model.columns),
        "mean": model.mean.tolist(),
        "scale": model.scale.tolist(),
        "encoder": layers(model.encoder),
        "decoder": layers(model.decoder),
    }


def model_from_dict(d: dict) -> ChartModel:
    if d.get("format") != MODEL_FORMAT:
        raise ValueError("not a chart model dump")
    if d.get("version") != MODEL_VERSION:
        raise ValueError(f"unsupported model version {d.get('version')}")

    def layers(ls):
        return [(np.array(l["w"], dtype=float), np.array(l["b"], dtype=float)) for l in ls]

    return ChartModel(layers(d["encoder"]), layers(d["decoder"]), np.array(d["mean"], float),
                      np.array(d["scale"], float), tuple(d["columns"]), d["activation"])


def save_model(model: ChartModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh)


def load_model(path) -> ChartModel:
    with open(path) as fh:
        return model_from_dict(json.load(fh))


def config_dict(cfg: TrainConfig) -> dict:
    d = asdict(cfg)
    d["hidden"] = list(cfg.hidden)
    return d
