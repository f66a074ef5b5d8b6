"""Standard run: shared chart, per-environment tables, tracker vs sliding windows."""

import argparse
import time

from ccbeam.beam_map import KeyGenConfig
from ccbeam.experiments import (SystemConfig, baseline_all, chart_quality, desk_train_config,
                                matched_window, run_standard, stack_features,
                                standard_trajectories)
from ccbeam.trajectory import ScenarioConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--count", type=int, default=100)
    ap.add_argument("--steps", type=int, default=200)
    ap.add_argument("--beams", type=int, default=64)
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--k-res", type=int, default=1)
    args = ap.parse_args()

    sc = ScenarioConfig(n_steps=args.steps, n_tx=args.beams, n_rx=args.beams)
    cfg = SystemConfig(train=desk_train_config(epochs=args.epochs),
                       keygen=KeyGenConfig(k_res=args.k_res))
    t0 = time.perf_counter()
    trajs = standard_trajectories(sc, args.count)
    total, _, model, info = run_standard(trajs, cfg)
    print(f"tracked {args.count} trajectories in {time.perf_counter() - t0:.0f} s "
          f"(training {info['train_seconds']:.0f} s)")
    print("tracker   ", total.summary())

    trained, init = chart_quality(model, stack_features(trajs)[0], cfg.train)
    print(f"10-NN preservation: trained {trained:.3f}, init {init:.3f}")

    for w in (1, 2, 4, 8, 16):
        m = baseline_all(trajs, w)
        print(f"window w={w:<3d}", f"accuracy {m.accuracy:.4f}  N_s {m.N_s}")
    w, m = matched_window(trajs, total.accuracy, args.beams // 2)
    print(f"matched window w={w}: accuracy {m.accuracy:.4f}, N_s {m.N_s}, "
          f"tracker uses {total.N_s / m.N_s:.1%}")


if __name__ == "__main__":
    main()
