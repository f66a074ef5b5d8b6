"""A scripted line-of-sight blockage: does the tracker's candidate set catch the jump?"""

import argparse

from ccbeam.beam_map import KeyGenConfig
from ccbeam.experiments import (SystemConfig, desk_train_config, environment_systems,
                                standard_trajectories, train_chart)
from ccbeam.tracker import run_tracker, sliding_window_baseline
from ccbeam.trajectory import ScenarioConfig, scripted_blockage


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=1000)
    ap.add_argument("--step", type=int, default=51)
    ap.add_argument("--window", type=int, default=1)
    args = ap.parse_args()

    cfg = SystemConfig(train=desk_train_config(), keygen=KeyGenConfig(k_res=1))
    model, _ = train_chart(standard_trajectories(count=100), cfg.train)
    traj = scripted_blockage(ScenarioConfig(seed=args.seed), args.step)
    system = environment_systems(model, [traj], cfg)[0]

    t = args.step
    rec = run_tracker(traj, system).records[t]
    win = sliding_window_baseline(traj, args.window).records[t]
    print(f"truth {traj.truth[t - 1]} -> {traj.truth[t]} at step {t}")
    print(f"tracker candidates tx={rec.cand_t} rx={rec.cand_r} picked ({rec.pred_r}, {rec.pred_t})")
    print(f"window w={args.window} picked ({win.pred_r}, {win.pred_t})")


if __name__ == "__main__":
    main()
