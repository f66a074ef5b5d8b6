"""Command-line harness: synth, train, track, sweep, timeliness, defaults.

Exit codes: 0 on success, 1 on invalid configuration or arguments, 2 when a
run fails (missing files, divergence, ...).
"""

from __future__ import annotations

import argparse
import csv
import glob
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from .beam_map import SelectionConfig, load_table, save_table
from .charting import load_model, save_model
from .config import ConfigError, RunConfig, dump_config, load_config
from .experiments import (baseline_all, environment_systems, matched_window, timeliness_series,
                          train_chart)
from .features import FEATURE_SETS, trajectory_features, write_feature_csv
from .tracker import ChartSystem, Metrics, run_tracker, write_records_csv
from .trajectory import generate_trajectories, read_trajectory, trajectory_digest, write_trajectory

log = logging.getLogger("ccbeam")


class RunError(RuntimeError):
    pass


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def _load_trajectories(data_dir):
    paths = sorted(glob.glob(os.path.join(data_dir, "traj_*.txt")))
    if not paths:
        raise RunError(f"no traj_*.txt files in {data_dir}")
    return [read_trajectory(p) for p in paths]


# -- subcommands ------------------------------------------------------------------

def cmd_defaults(cfg: RunConfig, args) -> int:
    sys.stdout.write(dump_config(RunConfig()))
    return 0


def cmd_synth(cfg: RunConfig, args) -> int:
    os.makedirs(args.out, exist_ok=True)
    trajs = generate_trajectories(cfg.scenario, cfg.n_trajectories)
    rows = []
    for i, traj in enumerate(trajs):
        write_trajectory(traj, os.path.join(args.out, f"traj_{i:03d}.txt"))
        write_feature_csv(os.path.join(args.out, f"feat_{i:03d}.csv"),
                          trajectory_features(traj), traj.truth)
        rows.append((i, traj.config.seed, trajectory_digest(traj)))
    _write_csv(os.path.join(args.out, "manifest.csv"), ["index", "seed", "sha256"], rows)
    with open(os.path.join(args.out, "config.txt"), "w") as fh:
        fh.write(dump_config(cfg))
    for i, seed, digest in rows:
        print(f"{i:03d} seed={seed} sha256={digest}")
    return 0


def cmd_train(cfg: RunConfig, args) -> int:
    trajs = _load_trajectories(args.data)
    os.makedirs(args.out, exist_ok=True)
    try:
        model, history = train_chart(trajs, cfg.train)
    except ValueError as exc:
        raise RunError(str(exc)) from None
    save_model(model, os.path.join(args.out, "model.json"))
    _write_csv(os.path.join(args.out, "loss_history.csv"),
               ["epoch", "total", "triplet", "reconstruction"],
               [(e, t, c, r) for e, (t, c, r) in enumerate(zip(history.total, history.triplet,
                                                               history.reconstruction))])
    tdir = os.path.join(args.out, "tables")
    os.makedirs(tdir, exist_ok=True)
    sel_rows = []
    for i, system in enumerate(environment_systems(model, trajs, cfg.system_config())):
        for side in ("tx", "rx"):
            save_table(getattr(system, f"table_{side}"), os.path.join(tdir, f"env_{i:03d}.{side}.txt"))
            s = getattr(system, f"select_{side}")
            sel_rows.append((i, side, s.delta, s.delta_min, s.delta_max, s.target_set_size))
    _write_csv(os.path.join(args.out, "selection.csv"),
               ["env", "side", "delta", "delta_min", "delta_max", "target_set_size"], sel_rows)
    print(f"trained {len(history.total)} epochs on {len(trajs)} trajectories; "
          f"final loss {history.total[-1] if history.total else float('nan'):.5f}")
    return 0


def _load_systems(model_path, table_dir, trajs):
    if not os.path.exists(model_path):
        raise RunError(f"model file {model_path} not found")
    model = load_model(model_path)
    sel_path = os.path.join(table_dir, "..", "selection.csv")
    sel = {}
    if os.path.exists(sel_path):
        with open(sel_path, newline="") as fh:
            for row in csv.DictReader(fh):
                sel[(int(row["env"]), row["side"])] = SelectionConfig(
                    float(row["delta"]), float(row["delta_min"]), float(row["delta_max"]),
                    float(row["target_set_size"]))
    systems = []
    for i, traj in enumerate(trajs):
        tables = {}
        for side in ("tx", "rx"):
            p = os.path.join(table_dir, f"env_{i:03d}.{side}.txt")
            if not os.path.exists(p):
                raise RunError(f"table file {p} not found")
            tables[side] = load_table(p)
        systems.append(ChartSystem(model, tables["tx"], tables["rx"],
                                   sel.get((i, "tx"), SelectionConfig()),
                                   sel.get((i, "rx"), SelectionConfig()),
                                   traj.config.n_tx, traj.config.n_rx))
    return model, systems


def _summary_row(name, m: Metrics, reference_ns=None):
    red = 1.0 - m.N_s / reference_ns if reference_ns else float("nan")
    return (name, m.n_steps, m.E_ps, m.E_pd, m.N_s, m.N_s_formula, m.misalignments,
            m.accuracy, m.mean_scans_per_step, red)


SUMMARY_HEADER = ["method", "steps", "E_ps", "E_pd", "N_s", "N_s_formula", "misalignments",
                  "accuracy", "mean_scans_per_step", "scan_reduction_vs_window"]


def cmd_track(cfg: RunConfig, args) -> int:
    trajs = _load_trajectories(args.data)
    model_path = args.model or os.path.join(args.artifacts, "model.json")
    table_dir = args.tables or os.path.join(args.artifacts, "tables")
    _, systems = _load_systems(model_path, table_dir, trajs)
    os.makedirs(os.path.join(args.out, "records"), exist_ok=True)
    total = Metrics()
    for i, (traj, system) in enumerate(zip(trajs, systems)):
        res = run_tracker(traj, system, cfg.tracker)
        write_records_csv(os.path.join(args.out, "records", f"track_{i:03d}.csv"), res.records)
        total += res.metrics
    window = baseline_all(trajs, 1)
    w_match, matched = matched_window(trajs, total.accuracy, max(cfg.scenario.n_tx, cfg.scenario.n_rx) // 2)
    rows = [_summary_row("tracker", total, matched.N_s),
            _summary_row("exhaustive", baseline_all(trajs, None)),
            _summary_row("window_w1", window),
            _summary_row(f"window_matched_w{w_match}", matched)]
    _write_csv(os.path.join(args.out, "summary.csv"), SUMMARY_HEADER, rows)
    print(f"accuracy {total.accuracy:.4f}  scans/step/side {total.mean_scans_per_step:.3f}  "
          f"matched window w={w_match} reduction {rows[0][-1]:.3f}")
    return 0


def cmd_sweep(cfg: RunConfig, args) -> int:
    sets = [s.strip() for s in args.feature_sets.split(",") if s.strip()]
    widths = [int(w) for w in args.widths.split(",") if w.strip()]
    for s in sets:
        if s not in FEATURE_SETS:
            raise ConfigError(f"unknown feature set {s!r}")
    trajs = generate_trajectories(cfg.scenario, cfg.n_trajectories)
    os.makedirs(args.out, exist_ok=True)
    rows = []
    for s in sets:
        for w in widths:
            tc = replace(cfg.train, feature_set=s, hidden=(w,) + tuple(cfg.train.hidden[1:]))
            model, _ = train_chart(trajs, tc)
            total = Metrics()
            for traj, system in zip(trajs, environment_systems(model, trajs, cfg.system_config())):
                total += run_tracker(traj, system, cfg.tracker).metrics
            rows.append((s, len(FEATURE_SETS[s]), w, total.E_ps_rate, total.E_pd_rate,
                         total.accuracy, total.mean_scans_per_step))
            print(f"{s:9s} dim={len(FEATURE_SETS[s])} width={w:4d} E_ps={total.E_ps_rate:.4f} "
                  f"E_pd={total.E_pd_rate:.4f}")
    _write_csv(os.path.join(args.out, "sweep.csv"),
               ["feature_set", "input_dim", "hidden_width", "E_ps_rate", "E_pd_rate", "accuracy",
                "mean_scans_per_step"], rows)
    return 0


def cmd_timeliness(cfg: RunConfig, args) -> int:
    sizes = [int(n) for n in args.codebooks.split(",")]
    os.makedirs(args.out, exist_ok=True)
    rows = []
    for n in sizes:
        sc = cfg.scenario.replace(n_tx=n, n_rx=n)
        eps, epd = timeliness_series(sc, cfg.timeliness_k, cfg.system_config(), cfg.tracker)
        rows += [(i, a, b, n) for i, (a, b) in enumerate(zip(eps, epd))]
        print(f"N={n}: E_ps first/last {eps[0]:.4f}/{eps[-1]:.4f}  "
              f"median E_ps {np.median(eps):.4f} E_pd {np.median(epd):.4f}")
    _write_csv(os.path.join(args.out, "timeliness.csv"),
               ["path_idx", "E_ps_rate", "E_pd_rate", "codebook"], rows)
    return 0


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "track": cmd_track, "sweep": cmd_sweep,
            "timeliness": cmd_timeliness, "defaults": cmd_defaults}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ccbeam", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="flat key = value configuration file")
        sp.add_argument("--seed", type=int, help="overrides every seed in the config")
        sp.add_argument("--out", default=None, help="output directory")
        if name in ("train", "track"):
            sp.add_argument("--data", required=True, help="directory written by synth")
        if name == "track":
            sp.add_argument("--artifacts", default="artifacts", help="directory written by train")
            sp.add_argument("--model")
            sp.add_argument("--tables")
        if name == "sweep":
            sp.add_argument("--feature-sets", default="azimuth,elevation,full")
            sp.add_argument("--widths", default="4,8,16,32,64,128,256,512")
        if name == "timeliness":
            sp.add_argument("--codebooks", default="64,128")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        cfg.validate()
        args.out = args.out or cfg.out_dir
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (RunError, OSError, FloatingPointError, LookupError) as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
