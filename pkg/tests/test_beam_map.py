import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ccbeam.beam_map import (BeamMapTable, HashParams, KeyGenConfig, SelectionConfig,
                             build_table, calibrate_delta, delta_range, dump_table, load_table,
                             lookup_candidates, make_hash_params, make_key, mean_probes,
                             parse_table, save_table, select_beams, universal_hash, update_table)

ORIGIN = (0.0, 0.0)


def random_table(rng, n=1000, seed=0):
    keys = rng.choice(10 ** 6, n, replace=False)
    table = BeamMapTable(make_hash_params(int(keys.max()), n, seed), KeyGenConfig(origin_shift=ORIGIN))
    for k in keys:
        table.insert_key(int(k), 0, (0.0, 0.0))
    return table


# -- keys and hashing ------------------------------------------------------------------

def test_key_examples():
    assert make_key((0.5, 0.5), KeyGenConfig(k_res=1, origin_shift=ORIGIN)) == 0
    assert make_key((1.2, 2.7), KeyGenConfig(k_res=10, origin_shift=ORIGIN)) == 79872


def test_key_uses_origin_shift():
    cfg = KeyGenConfig(k_res=1, origin_shift=(-2.0, -3.0))
    assert make_key((-1.5, -2.5), cfg) == 4 * (0 + 0)
    assert make_key((0.0, 0.0), cfg) == 4 * (2 + 3)


def test_key_rejects_nan():
    with pytest.raises(ValueError):
        make_key((math.nan, 0.0), KeyGenConfig())


@given(st.floats(0, 50), st.floats(0, 50), st.floats(0, 0.999), st.floats(0, 0.999))
def test_same_cell_same_key(a, b, da, db):
    cfg = KeyGenConfig(k_res=1, origin_shift=ORIGIN)
    a, b = math.floor(a), math.floor(b)
    assert make_key((a + da, b + db), cfg) == make_key((a, b), cfg)
    assert make_key((a, b), cfg) >= 0


def test_swapped_cells_share_a_key():
    cfg = KeyGenConfig(k_res=1, origin_shift=ORIGIN)
    assert make_key((1.5, 3.5), cfg) == make_key((3.5, 1.5), cfg)


@pytest.mark.parametrize("bad", [dict(c=1), dict(k_res=0)])
def test_keygen_validation(bad):
    with pytest.raises(ValueError):
        KeyGenConfig(**bad)


def test_hash_worked_example():
    assert universal_hash(8, HashParams(s=18, m=7, c_h=3, d_h=4)) == 3


def test_identity_hash_is_mod_m():
    p = HashParams(s=101, m=7, c_h=1, d_h=0)
    assert [universal_hash(k, p) for k in range(100)] == [k % 7 for k in range(100)]


@given(st.integers(0, 10 ** 9), st.integers(0, 1000))
def test_hash_in_range(key, seed):
    p = make_hash_params(10 ** 9, 97, seed)
    assert 0 <= universal_hash(key, p) < p.m


def test_pair_collision_rate_is_universal():
    m, s, trials = 13, 1009, 2000
    rng = np.random.default_rng(0)
    a, b = 17, 300
    hits = 0
    for _ in range(trials):
        p = HashParams(s, m, int(rng.integers(1, s)), int(rng.integers(0, s)))
        hits += universal_hash(a, p) == universal_hash(b, p)
    bound = 1 / m + 3 * math.sqrt((1 / m) * (1 - 1 / m) / trials)
    assert hits / trials <= bound


def test_hash_params_validated():
    with pytest.raises(ValueError):
        HashParams(18, 7, 3, 4).check()
    with pytest.raises(ValueError):
        HashParams(11, 11, 3, 4).check()
    with pytest.raises(ValueError):
        HashParams(11, 7, 0, 4).check()
    HashParams(11, 7, 3, 4).check()


def test_generated_params_are_valid():
    p = make_hash_params(5000, 300, seed=3)
    p.check()
    assert p.s > 5000


# -- table structure -----------------------------------------------------------------------

def test_single_point_table():
    t = build_table([[0.3, 0.4]], [5])
    assert t.n_keys == 1
    [c] = lookup_candidates(t, (0.3, 0.4))
    assert c.beam == 5 and c.hits == 1


def test_two_beams_in_one_cell():
    t = build_table([[0.1, 0.1], [0.2, 0.2]], [1, 2], KeyGenConfig(k_res=1))
    assert t.n_keys == 1
    assert sorted(c.beam for c in lookup_candidates(t, (0.15, 0.15))) == [1, 2]


def test_stored_beams_equal_distinct_key_beam_pairs():
    rng = np.random.default_rng(0)
    pts = rng.uniform(0, 3, (500, 2))
    beams = rng.integers(0, 8, 500)
    cfg = KeyGenConfig(k_res=2)
    t = build_table(pts, beams, cfg)
    shifted = KeyGenConfig(k_res=2, origin_shift=tuple(pts.min(axis=0)))
    expect = {(make_key(y, shifted), int(b)) for y, b in zip(pts, beams)}
    stored = {(n.key, b) for n in t.nodes() for b in n.beams}
    assert stored == expect
    assert sum(e.hits for n in t.nodes() for e in n.beams.values()) == 500


def test_every_training_point_finds_its_beam():
    rng = np.random.default_rng(1)
    pts = rng.normal(size=(300, 2))
    beams = rng.integers(0, 64, 300)
    t = build_table(pts, beams)
    for y, b in zip(pts, beams):
        assert b in {c.beam for c in lookup_candidates(t, y)}


def test_unknown_key_gives_empty_set():
    t = build_table([[0.0, 0.0]], [1], KeyGenConfig(k_res=1))
    assert lookup_candidates(t, (40.0, 40.0)) == []
    assert lookup_candidates(t, (-5.0, -5.0)) == []


def test_lookup_records_probes():
    t = build_table([[0.0, 0.0]], [1])
    lookup_candidates(t, (0.0, 0.0))
    assert t.last_probes == 1


def test_build_rejects_bad_input():
    with pytest.raises(ValueError):
        build_table(np.zeros((0, 2)), [])
    with pytest.raises(ValueError):
        build_table(np.zeros((2, 2)), [1])


def test_mean_probes_bounded_by_load_factor():
    rng = np.random.default_rng(2)
    probes, alphas = [], []
    for seed in range(20):
        t = random_table(rng, seed=seed)
        probes.append(mean_probes(t))
        alphas.append(t.load_factor)
    assert np.mean(probes) <= 1 + np.mean(alphas) + 0.1


def test_audit_after_random_updates():
    rng = np.random.default_rng(3)
    t = build_table(rng.normal(size=(50, 2)), rng.integers(0, 16, 50), KeyGenConfig(k_res=5))
    for _ in range(1000):
        update_table(t, rng.normal(scale=2, size=2), int(rng.integers(0, 16)))
    t.audit()


def test_audit_catches_misplaced_node():
    t = build_table([[0.0, 0.0], [5.0, 5.0]], [1, 2], KeyGenConfig(k_res=1))
    node = next(t.nodes())
    wrong = (universal_hash(node.key, t.params) + 1) % t.params.m
    t.slots[wrong].append(node)
    with pytest.raises(AssertionError):
        t.audit()


# -- selection -------------------------------------------------------------------------------

def test_infinite_delta_keeps_all():
    t = build_table([[0.1, 0.1], [0.2, 0.2], [0.3, 0.3]], [1, 2, 3], KeyGenConfig(k_res=1))
    cands = lookup_candidates(t, (0.1, 0.1))
    assert len(select_beams(cands, (0.1, 0.1), SelectionConfig())) == 3


def test_zero_delta_keeps_coincident_anchor():
    t = build_table([[0.1, 0.1], [0.2, 0.2]], [1, 2], KeyGenConfig(k_res=1))
    cands = lookup_candidates(t, (0.2, 0.2))
    assert [c.beam for c in select_beams(cands, (0.2, 0.2), 0.0)] == [2]


def test_selection_matches_brute_force():
    rng = np.random.default_rng(4)
    t = build_table(rng.uniform(0, 1, (400, 2)), rng.integers(0, 32, 400), KeyGenConfig(k_res=2))
    for _ in range(100):
        q = rng.uniform(0, 1, 2)
        delta = rng.uniform(0, 0.5)
        cands = lookup_candidates(t, q)
        got = {c.beam for c in select_beams(cands, q, delta)}
        expect = {c.beam for c in cands if np.linalg.norm(c.anchors - q, axis=1).min() <= delta}
        assert got == expect
        assert got <= {c.beam for c in cands}


def test_priority_order():
    t = build_table([[0.10, 0.10], [0.30, 0.30], [0.31, 0.31], [0.6, 0.6]], [1, 2, 2, 3],
                    KeyGenConfig(k_res=1))
    q = (0.32, 0.32)
    order = [c.beam for c in select_beams(lookup_candidates(t, q), q, math.inf)]
    assert order == [2, 1, 3]
    update_table(t, (0.9, 0.9), 1)
    order = [c.beam for c in select_beams(lookup_candidates(t, q), q, math.inf)]
    assert order[0] == 1


def test_update_on_new_cell_creates_singleton():
    t = build_table([[0.0, 0.0]], [1], KeyGenConfig(k_res=1))
    update_table(t, (30.0, 0.0), 9)
    [c] = lookup_candidates(t, (30.0, 0.0))
    assert c.beam == 9 and c.updated
    t.audit()


def test_update_outranks_existing_hits():
    t = build_table([[0.1, 0.1]] * 5 + [[0.2, 0.2]], [4] * 5 + [7], KeyGenConfig(k_res=1))
    update_table(t, (0.2, 0.2), 7)
    hits = {c.beam: c.hits for c in lookup_candidates(t, (0.1, 0.1))}
    assert hits[7] == 6


def test_delta_range_and_calibration():
    rng = np.random.default_rng(5)
    pts = rng.uniform(0, 1, (300, 2))
    t = build_table(pts, rng.integers(0, 16, 300), KeyGenConfig(k_res=1))
    dmin, dmax = delta_range(pts)
    diff = pts[:, None] - pts[None]
    d = np.sqrt((diff ** 2).sum(-1))
    assert dmax == pytest.approx(d.max())
    assert dmin == pytest.approx(d[d > 0].min())
    sizes = []
    for delta in np.linspace(dmin, dmax, 15):
        sizes.append(np.mean([len(select_beams(lookup_candidates(t, y), y, delta)) for y in pts]))
    assert np.all(np.diff(sizes) >= 0)
    sel = calibrate_delta(t, pts, 2.0)
    assert dmin <= sel.delta <= dmax
    got = np.mean([len(select_beams(lookup_candidates(t, y), y, sel)) for y in pts])
    assert got >= 2.0


def test_calibration_with_coincident_anchors_returns_minimum():
    pts = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 0.5]])
    t = build_table(pts, [1, 2, 3], KeyGenConfig(k_res=1))
    sel = calibrate_delta(t, pts, 1.0)
    assert sel.delta == sel.delta_min


def test_calibration_needs_data():
    t = build_table([[0.0, 0.0]], [1])
    with pytest.raises(ValueError):
        calibrate_delta(t, np.zeros((0, 2)), 1.0)


def test_max_delta_keeps_everything():
    rng = np.random.default_rng(6)
    pts = rng.normal(size=(200, 2))
    t = build_table(pts, rng.integers(0, 16, 200), KeyGenConfig(k_res=1))
    _, dmax = delta_range(pts)
    for y in pts:
        cands = lookup_candidates(t, y)
        assert len(select_beams(cands, y, dmax)) == len(cands)


# -- nearest anchor ----------------------------------------------------------------------------

def test_nearest_anchor_matches_brute_force_with_updates():
    rng = np.random.default_rng(7)
    pts = rng.normal(size=(300, 2))
    beams = rng.integers(0, 64, 300)
    t = build_table(pts, beams)
    all_pts, all_beams = list(pts), list(beams)
    for i in range(100):
        if i % 3 == 0:
            y, b = rng.normal(size=2), int(rng.integers(0, 64))
            update_table(t, y, b)
            all_pts.append(y)
            all_beams.append(b)
        q = rng.normal(size=2)
        d = np.linalg.norm(np.array(all_pts) - q, axis=1)
        beam, dist = t.nearest_anchor(q)
        assert dist == pytest.approx(d.min())
        assert beam == all_beams[int(np.argmin(d))]


def test_empty_table_has_no_nearest_anchor():
    t = BeamMapTable(HashParams(11, 7, 3, 4), KeyGenConfig(origin_shift=ORIGIN))
    with pytest.raises(LookupError):
        t.nearest_anchor((0.0, 0.0))


# -- serialization -----------------------------------------------------------------------------

def test_table_round_trip(tmp_path):
    rng = np.random.default_rng(8)
    pts = rng.normal(size=(200, 2))
    t = build_table(pts, rng.integers(0, 64, 200), KeyGenConfig(k_res=3))
    update_table(t, (0.1, 0.2), 3)
    path = tmp_path / "t.txt"
    save_table(t, path)
    back = load_table(path)
    back.audit()
    assert dump_table(back) == dump_table(t)
    for q in rng.normal(size=(50, 2)):
        a = [(c.beam, c.hits, c.updated) for c in lookup_candidates(t, q)]
        b = [(c.beam, c.hits, c.updated) for c in lookup_candidates(back, q)]
        assert a == b
        assert back.nearest_anchor(q) == t.nearest_anchor(q)


def test_bad_table_dump_rejected():
    with pytest.raises(ValueError):
        parse_table("something else\n")
    text = dump_table(build_table([[0.0, 0.0]], [1]))
    with pytest.raises(ValueError):
        parse_table(text.replace(" v1", " v9", 1))


@settings(max_examples=25, deadline=None)
@given(st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5), st.integers(0, 15)),
                min_size=1, max_size=60), st.integers(1, 20))
def test_build_then_lookup_property(rows, k):
    pts = np.array([r[:2] for r in rows])
    beams = [r[2] for r in rows]
    t = build_table(pts, beams, KeyGenConfig(k_res=k))
    t.audit()
    for y, b in zip(pts, beams):
        assert b in {c.beam for c in lookup_candidates(t, y)}
