"""The twelve acceptance criteria at their stated tolerances.

Each test records one ``criterion N: PASS|FAIL`` line, printed in the pytest
terminal summary. The end-to-end criteria share one standard run (100 seeded
trajectories of 200 steps, 64-beam codebooks on both sides).
"""

import sys
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from ccbeam.beam_map import (BeamMapTable, HashParams, KeyGenConfig, make_hash_params,
                             mean_probes, universal_hash)
from ccbeam.channel import Path, best_beam_oracle, channel_matrix, dft_codebook
from ccbeam.charting import gradient_check, init_model, triplet_loss
from ccbeam.experiments import (SystemConfig, chart_quality, desk_train_config,
                                environment_systems, matched_window, run_standard,
                                stack_features, standard_trajectories, timeliness_series,
                                train_chart)
from ccbeam.tracker import (exhaustive_baseline, metrics_from_records, read_records_csv,
                            run_tracker, scan_confirm, sliding_window_baseline,
                            write_records_csv)
from ccbeam.trajectory import ScenarioConfig, scripted_blockage

STANDARD = ScenarioConfig()
SYSTEM = SystemConfig(train=desk_train_config(), keygen=KeyGenConfig(k_res=1))


def check(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def standard():
    t0 = time.perf_counter()
    trajs = standard_trajectories(STANDARD, 100)
    t_gen = time.perf_counter() - t0
    model, history = train_chart(trajs, SYSTEM.train)
    t_train = time.perf_counter() - t0 - t_gen
    total, results, _, info = run_standard(trajs, SYSTEM, model=model)
    elapsed = time.perf_counter() - t0
    return dict(trajs=trajs, model=model, total=total, results=results, info=info,
                elapsed=elapsed, t_train=t_train)


# -- unit-scale criteria ---------------------------------------------------------------

def test_criterion_01_hash_worked_example():
    got = universal_hash(8, HashParams(s=18, m=7, c_h=3, d_h=4))
    check(1, got == 3, f"h(8) = {got}")


def test_criterion_02_codebook_orthonormality():
    errs = {n: float(np.linalg.norm(dft_codebook(n).vectors.conj().T @ dft_codebook(n).vectors
                                    - np.eye(n))) for n in (4, 16, 64, 128)}
    worst = max(errs.values())
    check(2, worst <= 1e-10, f"max ||C^H C - I||_F = {worst:.2e}")


def test_criterion_03_gradient_check():
    rng = np.random.default_rng(0)
    model = init_model(5, (256, 64), 2, seed=3)
    xa, xp, xn, xr = rng.normal(size=(4, 32, 5))
    err = gradient_check(model, xa, xp, xn, xr, delta=1.0, weight=1.0, directions=10)
    check(3, err <= 1e-4, f"max relative error {err:.2e} over 10 directions")


def test_criterion_04_collapsed_loss():
    model = init_model(5, (256, 64), 2, seed=0)
    w, b = model.encoder[-1]
    model.encoder[-1] = (np.zeros_like(w), np.zeros_like(b))
    x = np.random.default_rng(1).normal(size=(50, 5))
    trip = np.stack([np.arange(0, 40), np.arange(1, 41), np.arange(10, 50)], axis=1)
    loss = triplet_loss(model, x, trip, delta=1.0)
    check(4, loss == 1.0, f"collapsed C_n = {loss!r}")


def test_criterion_05_oracle_equivalence():
    rng = np.random.default_rng(5)
    cb_t, cb_r = dft_codebook(64), dft_codebook(64)
    agree = 0
    for _ in range(100):
        paths = [Path(complex(*rng.normal(size=2)), *rng.uniform(-1, 1, 2)) for _ in range(3)]
        h = channel_matrix(paths, 64, 64).h
        (m, n), _, _ = scan_confirm(h, range(64), range(64), cb_t, cb_r)
        agree += (m, n) == best_beam_oracle(h, cb_t, cb_r)[:2]
    check(5, agree == 100, f"{agree}/100 channels match")


def test_criterion_06_hash_probes():
    rng = np.random.default_rng(6)
    probes, alphas = [], []
    for seed in range(20):
        keys = rng.choice(10 ** 7, 1000, replace=False)
        table = BeamMapTable(make_hash_params(int(keys.max()), 1000, seed),
                             KeyGenConfig(origin_shift=(0.0, 0.0)))
        for k in keys:
            table.insert_key(int(k), 0, (0.0, 0.0))
        probes.append(mean_probes(table))
        alphas.append(table.load_factor)
    p, a = float(np.mean(probes)), float(np.mean(alphas))
    check(6, p <= 1 + a + 0.1, f"mean probes {p:.3f} <= 1 + alpha + 0.1 = {1 + a + 0.1:.3f}")


# -- end-to-end criteria ----------------------------------------------------------------

def test_criterion_07_end_to_end(standard):
    m = standard["total"]
    ok = m.accuracy >= 0.95 and m.mean_scans_per_step <= 4 and standard["elapsed"] <= 300
    check(7, ok, f"accuracy {m.accuracy:.4f}, scans/step/side {m.mean_scans_per_step:.3f}, "
                 f"{standard['elapsed']:.0f} s")


def test_criterion_08_scan_reduction(standard):
    m = standard["total"]
    w, win = matched_window(standard["trajs"], m.accuracy, STANDARD.n_tx // 2)
    ratio = m.N_s / win.N_s
    ok = win.accuracy >= m.accuracy and ratio <= 0.5
    check(8, ok, f"tracker N_s {m.N_s} vs window w={w} N_s {win.N_s} "
                 f"(accuracy {win.accuracy:.4f}): ratio {ratio:.3f}")


def test_criterion_09_jump_recovery(standard):
    traj = scripted_blockage(STANDARD.replace(seed=1000), jump_step=51)
    t = 51
    (m0, n0), (m1, n1) = traj.truth[t - 1], traj.truth[t]
    system = environment_systems(standard["model"], [traj], SYSTEM)[0]
    in_training = n1 in {b for node in system.table_tx.nodes() for b in node.beams} and \
        m1 in {b for node in system.table_rx.nodes() for b in node.beams}
    rec = run_tracker(traj, system).records[t]
    caught = n1 in rec.cand_t and m1 in rec.cand_r
    win = sliding_window_baseline(traj, 1).records[t]
    missed = bool(win.e_t or win.e_r)
    ok = in_training and caught and missed
    check(9, ok, f"jump ({m0},{n0})->({m1},{n1}) at step {t}: tracker sets tx={rec.cand_t} "
                 f"rx={rec.cand_r}; window w=1 misses={missed}")


def test_criterion_10_chart_quality(standard):
    feats, _ = stack_features(standard["trajs"])
    trained, init = chart_quality(standard["model"], feats, SYSTEM.train, k=10)
    gain = trained / init - 1
    ok = gain >= 0.20 and standard["t_train"] <= 120
    check(10, ok, f"10-NN preservation {trained:.3f} vs init {init:.3f} (+{100 * gain:.1f}%), "
                  f"training {standard['t_train']:.0f} s")


def test_criterion_11_timeliness():
    eps, epd = [], []
    for seed in range(20):
        a, b = timeliness_series(STANDARD.replace(seed=seed), 12, SYSTEM)
        eps.append(a)
        epd.append(b)
    med_ps, med_pd = np.median(eps, axis=0), np.median(epd, axis=0)
    first, last = med_ps[:4].mean(), med_ps[-4:].mean()
    ok = last >= first and bool(np.all(med_pd <= med_ps))
    check(11, ok, f"median E_ps first third {first:.3f} -> last third {last:.3f}; "
                  f"median E_pd <= E_ps on all 12 paths: {bool(np.all(med_pd <= med_ps))}")


def test_criterion_12_metrics_from_csv(standard, tmp_path):
    mismatches = 0
    runs = [(r.records, r.metrics) for r in standard["results"]]
    for traj in standard["trajs"][:10]:
        for res in (exhaustive_baseline(traj), sliding_window_baseline(traj, 1)):
            runs.append((res.records, res.metrics))
    for i, (records, metrics) in enumerate(runs):
        path = tmp_path / f"run_{i:03d}.csv"
        write_records_csv(path, records)
        again = metrics_from_records(read_records_csv(path), STANDARD.n_tx, STANDARD.n_rx)
        same = (again.E_ps, again.E_pd, again.N_s) == (metrics.E_ps, metrics.E_pd, metrics.N_s)
        mismatches += not (same and again.summary() == metrics.summary())
    check(12, mismatches == 0, f"{len(runs) - mismatches}/{len(runs)} runs recompute exactly")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
