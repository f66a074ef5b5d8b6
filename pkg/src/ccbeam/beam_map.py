"""Mapping table from chart coordinates to candidate beams.

Chart points are turned into integer keys, keys are spread over slots by a
universal hash ``h_cd(a) = ((c a + d) mod s) mod m`` and collisions are
resolved by chaining. Every stored beam keeps the chart points (anchors) it was
observed at, which the delta-neighbourhood filter uses to drop beams that only
share a key with the query by accident.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field, replace

import numpy as np
import sympy
from scipy.spatial import ConvexHull, QhullError, cKDTree

TABLE_FORMAT = "ccbeam-table"
TABLE_VERSION = 1


@dataclass(frozen=True)
class KeyGenConfig:
    c: int = 2
    k_res: int = 100
    # None means: use the componentwise minimum of the training chart
    origin_shift: tuple[float, float] | None = None

    def __post_init__(self):
        if self.c < 2:
            raise ValueError("generating factor c must be >= 2")
        if self.k_res < 1:
            raise ValueError("k_res must be >= 1")


@dataclass(frozen=True)
class HashParams:
    s: int
    m: int
    c_h: int
    d_h: int
    seed: int = 0

    def check(self):
        if not sympy.isprime(self.s):
            raise ValueError(f"s={self.s} is not prime")
        if not self.s > self.m >= 1:
            raise ValueError("need s > m >= 1")
        if not 1 <= self.c_h <= self.s - 1 or not 0 <= self.d_h <= self.s - 1:
            raise ValueError("c_h must lie in [1, s-1] and d_h in [0, s-1]")


@dataclass(frozen=True)
class SelectionConfig:
    delta: float = math.inf
    delta_min: float = 0.0
    delta_max: float = math.inf
    target_set_size: float = 2.0

    def __post_init__(self):
        if not self.delta_min <= self.delta <= self.delta_max:
            raise ValueError("delta must lie in [delta_min, delta_max]")


@dataclass
class Candidate:
    """One beam in a looked-up set. ``near`` counts anchors inside the filter
    radius and ``distance`` is the closest anchor to the query."""

    beam: int
    anchors: np.ndarray
    hits: int
    updated: bool = False
    near: int = 0
    distance: float = math.inf

    def priority(self):
        return (not self.updated, self.distance, -self.hits, self.beam)


@dataclass
class _Entry:
    anchors: list
    hits: int = 0
    updated: bool = False
    _arr: np.ndarray | None = None

    def points(self) -> np.ndarray:
        if self._arr is None or len(self._arr) != len(self.anchors):
            self._arr = np.array(self.anchors, dtype=float).reshape(-1, 2)
        return self._arr


@dataclass
class _Node:
    key: int
    beams: dict = field(default_factory=dict)


def make_key(y, cfg: KeyGenConfig) -> int:
    """``c^(k+1) * (floor(k (y1 - o1)) + floor(k (y2 - o2)))``.

    Keys are nonnegative for points at or above the origin shift; queries that
    fall below it give negative keys, which simply never match a stored key.
    """
    y1, y2 = float(y[0]), float(y[1])
    if math.isnan(y1) or math.isnan(y2):
        raise ValueError("chart point has NaN coordinates")
    k = cfg.k_res
    o1, o2 = cfg.origin_shift if cfg.origin_shift is not None else (0.0, 0.0)
    return cfg.c ** (k + 1) * (math.floor(k * (y1 - o1)) + math.floor(k * (y2 - o2)))


def universal_hash(ky: int, params) -> int:
    return ((params.c_h * ky + params.d_h) % params.s) % params.m


def _prime_near(n: int) -> int:
    if n < 2:
        return 1
    return int(sympy.prevprime(n + 1))


def make_hash_params(max_key: int, n_keys: int, seed: int = 0) -> HashParams:
    """Smallest prime ``s`` above every key, prime ``m`` near ``n_keys``, random ``(c, d)``."""
    m = _prime_near(max(n_keys, 1))
    s = int(sympy.nextprime(max(max_key, m)))
    r = random.Random(seed)
    return HashParams(s, m, r.randrange(1, s), r.randrange(0, s), seed)


class BeamMapTable:
    def __init__(self, params: HashParams, keygen: KeyGenConfig):
        params.check()
        if keygen.origin_shift is None:
            keygen = replace(keygen, origin_shift=(0.0, 0.0))
        self.params = params
        self.keygen = keygen
        self.slots: list[list[_Node]] = [[] for _ in range(params.m)]
        self._anchor_cache = None
        self._extra: list[tuple[float, float, int]] = []
        self.last_probes = 0

    # -- structure -----------------------------------------------------------

    @property
    def n_keys(self) -> int:
        return sum(len(c) for c in self.slots)

    @property
    def load_factor(self) -> float:
        return self.n_keys / self.params.m

    def nodes(self):
        for chain in self.slots:
            yield from chain

    def find(self, ky: int):
        """Walk the chain for ``ky``; returns ``(node or None, probes)``."""
        chain = self.slots[universal_hash(ky, self.params)]
        for probes, node in enumerate(chain, 1):
            if node.key == ky:
                return node, probes
        return None, len(chain)

    def _node_for(self, ky: int) -> _Node:
        node, _ = self.find(ky)
        if node is None:
            node = _Node(ky)
            self.slots[universal_hash(ky, self.params)].append(node)
        return node

    def insert(self, y, beam: int, hits: int = 1, updated: bool = False) -> None:
        node = self._node_for(make_key(y, self.keygen))
        entry = node.beams.get(int(beam))
        if entry is None:
            entry = node.beams[int(beam)] = _Entry([])
        entry.anchors.append((float(y[0]), float(y[1])))
        entry.hits += hits
        entry.updated = entry.updated or updated
        self._note_anchor(y, beam)

    def insert_key(self, ky: int, beam: int, anchor) -> None:
        """Insert under an explicit key (used by reload and the probe benchmarks)."""
        node = self._node_for(int(ky))
        entry = node.beams.setdefault(int(beam), _Entry([]))
        entry.anchors.append((float(anchor[0]), float(anchor[1])))
        entry.hits += 1
        self._note_anchor(anchor, beam)

    def _note_anchor(self, y, beam: int) -> None:
        # keep the KD-tree and scan a short list of late additions
        if self._anchor_cache is not None:
            self._extra.append((float(y[0]), float(y[1]), int(beam)))
            if len(self._extra) > 512:
                self._anchor_cache = None

    def all_anchors(self) -> tuple[np.ndarray, np.ndarray]:
        """Every stored anchor and its beam, for the nearest-label fallback."""
        if self._anchor_cache is None:
            self._extra = []
            pts, beams = [], []
            for node in self.nodes():
                for b, e in node.beams.items():
                    pts.extend(e.anchors)
                    beams.extend([b] * len(e.anchors))
            pts = np.array(pts, float).reshape(-1, 2)
            self._anchor_cache = (pts, np.array(beams, int),
                                  cKDTree(pts) if len(pts) else None)
        pts, beams, _ = self._anchor_cache
        if self._extra:
            ex = np.array(self._extra, float)
            pts = np.vstack([pts, ex[:, :2]])
            beams = np.concatenate([beams, ex[:, 2].astype(int)])
        return pts, beams

    def nearest_anchor(self, y) -> tuple[int, float]:
        """Beam of the closest stored anchor (ties go to the earliest stored)."""
        self.all_anchors()
        _, beams, tree = self._anchor_cache
        q = np.asarray(y, float)
        best_d, best_b = math.inf, None
        if tree is not None:
            d, i = tree.query(q)
            best_d, best_b = float(d), int(beams[i])
        for x1, x2, b in self._extra:
            d = math.hypot(x1 - q[0], x2 - q[1])
            if d < best_d:
                best_d, best_b = d, b
        if best_b is None:
            raise LookupError("table is empty")
        return best_b, best_d

    def audit(self) -> None:
        """Raise if any node is unreachable from its own key."""
        count = 0
        for idx, chain in enumerate(self.slots):
            keys = [n.key for n in chain]
            if len(set(keys)) != len(keys):
                raise AssertionError(f"duplicate key in slot {idx}")
            for node in chain:
                if universal_hash(node.key, self.params) != idx:
                    raise AssertionError(f"key {node.key} stored in wrong slot {idx}")
                for e in node.beams.values():
                    if e.hits < 1 or len(e.anchors) < 1:
                        raise AssertionError("empty beam entry")
                count += 1
        if count != self.n_keys:
            raise AssertionError("chain lengths do not sum to the key count")


def build_table(points, beams, keygen: KeyGenConfig | None = None,
                params: HashParams | None = None, seed: int = 0) -> BeamMapTable:
    """Insert every ``(chart point, beam)`` pair.

    Without an explicit ``origin_shift`` the componentwise minimum of the points
    is used, so every training key is nonnegative. Without explicit hash
    parameters they are derived from the keys (load factor about one).
    """
    points = np.asarray(points, float).reshape(-1, 2)
    beams = np.asarray(beams, int).ravel()
    if len(points) == 0:
        raise ValueError("empty training set")
    if len(points) != len(beams):
        raise ValueError("points and beams must align")
    if keygen is None:
        keygen = KeyGenConfig()
    if keygen.origin_shift is None:
        keygen = replace(keygen, origin_shift=tuple(float(v) for v in points.min(axis=0)))
    keys = [make_key(y, keygen) for y in points]
    if params is None:
        params = make_hash_params(max(keys), len(set(keys)), seed)
    table = BeamMapTable(params, keygen)
    for ky, y, b in zip(keys, points, beams):
        table.insert_key(ky, b, y)
    return table


def lookup_candidates(table: BeamMapTable, y) -> list[Candidate]:
    """Everything stored under the exact key of ``y`` (possibly empty)."""
    node, table.last_probes = table.find(make_key(y, table.keygen))
    if node is None:
        return []
    return [Candidate(b, e.points(), e.hits, e.updated) for b, e in node.beams.items()]


def mean_probes(table: BeamMapTable) -> float:
    """Average chain nodes visited by a successful lookup of each stored key."""
    if table.n_keys == 0:
        raise ValueError("table is empty")
    return float(np.mean([table.find(node.key)[1] for node in table.nodes()]))


def select_beams(candidates, y_query, cfg: SelectionConfig | float) -> list[Candidate]:
    """Keep beams with an anchor inside the delta-ball around ``y_query``.

    Returned candidates carry the number of anchors inside the ball and are
    sorted by priority: updated beams first, then nearest anchor, total hits
    and beam index.
    """
    delta = cfg.delta if isinstance(cfg, SelectionConfig) else float(cfg)
    q = np.asarray(y_query, float)
    out = []
    for c in candidates:
        d = np.linalg.norm(c.anchors - q, axis=1)
        near = int((d <= delta).sum())
        if near:
            out.append(Candidate(c.beam, c.anchors, c.hits, c.updated, near, float(d.min())))
    out.sort(key=Candidate.priority)
    return out


def delta_range(charts) -> tuple[float, float]:
    """Smallest nearest-neighbour distance and the largest pairwise distance."""
    charts = np.asarray(charts, float).reshape(-1, 2)
    if len(charts) < 2:
        return 0.0, 0.0
    d, _ = cKDTree(charts).query(charts, k=2)
    dmin = float(d[:, 1].min())
    try:
        pts = charts[ConvexHull(charts).vertices]
    except (QhullError, ValueError):
        pts = charts
    if len(pts) > 4000:
        pts = pts[np.linspace(0, len(pts) - 1, 4000).astype(int)]
    diff = pts[:, None, :] - pts[None, :, :]
    dmax = float(np.sqrt((diff ** 2).sum(-1)).max())
    return dmin, dmax


def calibrate_delta(table: BeamMapTable, charts, target_set_size: float,
                    iterations: int = 30) -> SelectionConfig:
    """Binary search for the smallest delta whose mean filtered-set size reaches the target."""
    charts = np.asarray(charts, float).reshape(-1, 2)
    if len(charts) == 0:
        raise ValueError("empty validation set")
    dmin, dmax = delta_range(charts)
    # per query point: nearest-anchor distance of each candidate beam at its key
    dists = []
    for y in charts:
        cands = lookup_candidates(table, y)
        dists.append(np.sort([np.linalg.norm(c.anchors - y, axis=1).min() for c in cands]))

    def mean_size(delta):
        return float(np.mean([np.searchsorted(d, delta, side="right") for d in dists]))

    if mean_size(dmin) >= target_set_size:
        delta = dmin
    elif mean_size(dmax) < target_set_size:
        delta = dmax
    else:
        lo, hi = dmin, dmax
        for _ in range(iterations):
            mid = 0.5 * (lo + hi)
            if mean_size(mid) >= target_set_size:
                hi = mid
            else:
                lo = mid
        delta = hi
    return SelectionConfig(delta, dmin, dmax, target_set_size)


def update_table(table: BeamMapTable, y, beam: int) -> None:
    """Attach an observed best beam to ``y`` so it ranks first on later lookups."""
    node = table._node_for(make_key(y, table.keygen))
    top = max((e.hits for e in node.beams.values()), default=0)
    entry = node.beams.setdefault(int(beam), _Entry([]))
    entry.anchors.append((float(y[0]), float(y[1])))
    entry.hits = top + 1
    entry.updated = True
    table._note_anchor(y, beam)


# -- serialization -------------------------------------------------------------

def dump_table(table: BeamMapTable) -> str:
    p, k = table.params, table.keygen
    lines = [f"{TABLE_FORMAT} v{TABLE_VERSION}",
             f"s={p.s} m={p.m} c_h={p.c_h} d_h={p.d_h} seed={p.seed}",
             f"c={k.c} k_res={k.k_res} origin={float(k.origin_shift[0])!r},{float(k.origin_shift[1])!r}"]
    for chain in table.slots:
        for node in chain:
            for b, e in node.beams.items():
                pts = ";".join(f"{x!r},{y!r}" for x, y in e.anchors)
                lines.append(f"{node.key} {b} {e.hits} {int(e.updated)} {pts}")
    return "\n".join(lines) + "\n"


def parse_table(text: str) -> BeamMapTable:
    rows = text.splitlines()
    if not rows or not rows[0].startswith(TABLE_FORMAT):
        raise ValueError("not a beam map table dump")
    if rows[0].split()[1] != f"v{TABLE_VERSION}":
        raise ValueError(f"unsupported table version {rows[0]}")
    hp = dict(kv.split("=", 1) for kv in rows[1].split())
    kp = dict(kv.split("=", 1) for kv in rows[2].split())
    ox, oy = (float(v) for v in kp["origin"].split(","))
    params = HashParams(int(hp["s"]), int(hp["m"]), int(hp["c_h"]), int(hp["d_h"]), int(hp["seed"]))
    keygen = KeyGenConfig(int(kp["c"]), int(kp["k_res"]), (ox, oy))
    table = BeamMapTable(params, keygen)
    for line in rows[3:]:
        if not line.strip():
            continue
        key, beam, hits, updated, pts = line.split(" ", 4)
        node = table._node_for(int(key))
        anchors = [tuple(float(v) for v in p.split(",")) for p in pts.split(";")]
        node.beams[int(beam)] = _Entry(anchors, int(hits), bool(int(updated)))
    return table


def save_table(table: BeamMapTable, path) -> None:
    with open(path, "w") as fh:
        fh.write(dump_table(table))


def load_table(path) -> BeamMapTable:
    with open(path) as fh:
        return parse_table(fh.read())
