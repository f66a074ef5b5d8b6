"""Path-error rates over K successive trajectories with a chart trained on the first."""

import argparse

import numpy as np

from ccbeam.beam_map import KeyGenConfig
from ccbeam.experiments import SystemConfig, desk_train_config, timeliness_series
from ccbeam.tracker import TrackerConfig
from ccbeam.trajectory import ScenarioConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("-k", type=int, default=12)
    ap.add_argument("--retrain-interval", type=int, default=0,
                    help="tracked steps between rebuilds; 0 keeps the system frozen")
    args = ap.parse_args()

    cfg = SystemConfig(train=desk_train_config(), keygen=KeyGenConfig(k_res=1))
    track = TrackerConfig(retrain_interval=args.retrain_interval)
    eps, epd = [], []
    for seed in range(args.seeds):
        a, b = timeliness_series(ScenarioConfig(seed=seed), args.k, cfg, track)
        eps.append(a)
        epd.append(b)
    med_ps, med_pd = np.median(eps, axis=0), np.median(epd, axis=0)
    print("path  median_E_ps  median_E_pd")
    for i, (a, b) in enumerate(zip(med_ps, med_pd), 1):
        print(f"{i:4d}  {a:11.3f}  {b:11.3f}")


if __name__ == "__main__":
    main()
