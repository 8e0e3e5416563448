"""Command-line surface: data collection, training, evaluation, reports.

Every subcommand writes into a timestamped directory under --out with the
resolved config echoed alongside the artifacts; exit codes are 0 on
success, 2 on validation errors, 3 on runtime failures.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import json
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import yaml

from . import config as cfgmod
from .config import ConfigError, load_config
from .data import load_dataset
from .motion import MotionConfig, MotionPredictor, MotionTrainConfig, train_motion
from .planner import CollectionConfig, collect_expert_dataset, plan_hybrid_astar
from .planner.grid_map import grid_from_lot
from .evaluation import (
    AblationRow,
    EvalConfig,
    EvalNoise,
    PolicySpec,
    attention_report,
    evaluate_spec,
    load_policy_net,
    median_seed_report,
    motion_comparison,
    profile_costs,
    report as reportmod,
)
from .evaluation.metrics import METRIC_OUTCOMES
from .geometry import OrientedRect
from .sim.bev import render_bev, write_pgm
from .sim.episode import EpisodeConfig, run_episode, episode_to_jsonl
from .sim.world import ParkingLot, Scenario, Slot, sample_scenario
from .sim.vehicle import VehicleState
from .train import TrainConfig, train


class CliError(Exception):
    def __init__(self, message: str, code: int = 2):
        super().__init__(message)
        self.code = code


def run_dir(out_root: str, command: str) -> Path:
    stamp = _dt.datetime.now().strftime("%Y%m%d-%H%M%S-%f")
    path = Path(out_root) / f"{command}-{stamp}"
    path.mkdir(parents=True, exist_ok=False)
    return path


def _require_file(path, what: str) -> Path:
    if path is None:
        raise CliError(f"missing required {what}")
    p = Path(path)
    if not p.exists():
        raise CliError(f"{what} not found: {p}")
    return p


def _log_to(path: Path):
    handle = open(path, "a")

    def log(msg: str):
        print(msg)
        handle.write(msg + "\n")
        handle.flush()
    return log


def _eval_config(cfg: dict, seed: int, n_episodes: int | None,
                 slots: list[int], noise: EvalNoise | None = None,
                 easy: bool = False) -> EvalConfig:
    return EvalConfig(
        n_episodes=n_episodes or cfg["eval"]["n_episodes"],
        seed=seed,
        world=cfgmod.build_world(cfg, easy=easy),
        slot_choices=slots,
        episode=cfgmod.build_episode_config(cfg),
        noise=noise or EvalNoise(),
        bev_noise=cfg["eval"]["bev_noise"])


def _policy_spec(cfg: dict, kind: str, checkpoint=None, motion=None,
                 noise: EvalNoise | None = None,
                 flags: dict | None = None) -> PolicySpec:
    flags = flags or {}
    train_cfg = cfgmod.build_train_config(cfg, **flags)
    use_motion = cfg["eval"]["motion_pred"]
    return PolicySpec(
        kind=kind,
        checkpoint=str(checkpoint) if checkpoint else None,
        policy_config=(cfgmod.build_policy_config(cfg, train_cfg)
                       if kind == "learned" else None),
        motion_checkpoint=str(motion) if (motion and use_motion) else None,
        pipeline=(cfgmod.build_pipeline(cfg, use_gt_map=False)
                  if kind == "modular" else None),
        bev_noise=cfg["eval"]["bev_noise"],
        noise=noise or EvalNoise(),
        execute_all=cfg["eval"]["execute_all"])


# ---------------------------------------------------------------------------
# subcommands


def cmd_collect(args, cfg: dict) -> int:
    out = run_dir(args.out, "collect")
    cfgmod.echo_config(cfg, out)
    log = _log_to(out / "log.txt")
    collection = CollectionConfig(
        world=cfgmod.build_world(cfg),
        pipeline=cfgmod.build_pipeline(cfg, use_gt_map=True, bev_noise=0.0),
        bev_spec=cfgmod.build_bev_spec(cfg),
        observation_noise=cfg["eval"]["observation_noise"],
        slot_choices=list(cfg["eval"]["train_slots"]),
        time_limit_s=cfg["eval"]["time_limit_s"])
    dataset_path = out / "expert.caad"
    stats = collect_expert_dataset(dataset_path, args.episodes, args.seed,
                                   params=cfgmod.build_vehicle(cfg),
                                   cfg=collection,
                                   vocab=cfgmod.build_vocab(cfg))
    log(f"collected {stats.retained}/{stats.attempted} episodes "
        f"({stats.frames} frames, retention {stats.retention:.1%}, "
        f"clips {stats.waypoint_clips}) -> {dataset_path}")
    log(f"outcomes: {stats.outcomes}")
    return 0


def cmd_train(args, cfg: dict) -> int:
    data = _require_file(args.data, "dataset")
    out = run_dir(args.out, "train")
    cfgmod.echo_config(cfg, out)
    log = _log_to(out / "log.txt")
    dataset = load_dataset(data)
    flags = {}
    if args.no_goal_tokens:
        flags["goal_tokens"] = False
    if args.no_waypoints:
        flags["waypoints"] = False
    if args.no_grad_attention:
        flags["grad_attention"] = False
    train_cfg = cfgmod.build_train_config(cfg, seed=args.seed, **flags)
    if args.epochs:
        train_cfg = replace(train_cfg, epochs=args.epochs)
    summary = train(dataset, cfgmod.build_vocab(cfg), out, train_cfg, log=log)
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    reportmod.training_curves(summary["metrics_csv"], out / "training_curves.png")
    log(f"best val {summary['best_val']:.4f} -> {summary['best_checkpoint']}")
    return 0


def cmd_train_motion(args, cfg: dict) -> int:
    data = _require_file(args.data, "dataset")
    out = run_dir(args.out, "train-motion")
    cfgmod.echo_config(cfg, out)
    log = _log_to(out / "log.txt")
    dataset = load_dataset(data)
    t = cfg["train"]
    model, history = train_motion(
        dataset, cfgmod.build_vocab(cfg),
        MotionConfig(single_frame=args.single_frame),
        MotionTrainConfig(lr=t["motion_lr"], batch_size=t["motion_batch_size"],
                          epochs=args.epochs or t["motion_epochs"],
                          seed=args.seed),
        log=log)
    ckpt = out / ("motion_single.caap" if args.single_frame else "motion.caap")
    model.save(ckpt)
    rows = [{"epoch": i, "train_nll": tr, "val_nll": va}
            for i, (tr, va) in enumerate(zip(history["train_nll"],
                                             history["val_nll"]))]
    reportmod.write_csv(out / "nll.csv", rows)
    log(f"saved {ckpt}")
    return 0


def cmd_eval(args, cfg: dict) -> int:
    out = run_dir(args.out, "eval")
    cfgmod.echo_config(cfg, out)
    log = _log_to(out / "log.txt")
    noise = EvalNoise(speed_noise_pct=args.speed_noise,
                      target_noise_m=args.target_noise)
    if args.policy == "learned":
        ckpt = _require_file(args.checkpoint, "checkpoint")
        motion = _require_file(args.motion, "motion checkpoint") \
            if cfg["eval"]["motion_pred"] else None
        spec = _policy_spec(cfg, "learned", ckpt, motion, noise)
    elif args.policy == "modular":
        motion = (_require_file(args.motion, "motion checkpoint")
                  if args.motion else None)
        spec = _policy_spec(cfg, "modular", motion=motion, noise=noise)
    else:
        spec = _policy_spec(cfg, "brake", noise=noise)

    train_meta = None
    if args.data:
        train_meta = load_dataset(_require_file(args.data, "dataset")).meta
    ecfg = _eval_config(cfg, args.seed, args.episodes,
                        list(cfg["eval"]["eval_slots"]), noise,
                        easy=args.easy)
    report = evaluate_spec(spec, ecfg, cfgmod.build_vehicle(cfg),
                           cfgmod.build_vocab(cfg), workers=args.workers,
                           train_meta=train_meta)
    rows = reportmod.metrics_table_rows({args.policy: report})
    reportmod.write_csv(out / "metrics.csv", rows)
    reportmod.write_markdown(out / "metrics.md", rows, title="Evaluation")
    reportmod.outcome_bars({args.policy: report}, out / "outcomes.png")
    (out / "report.json").write_text(json.dumps({
        "means": report.means, "stds": report.stds,
        "n_episodes": report.n_episodes, "n_error": report.n_error,
        "fingerprint": report.fingerprint, "outcomes": report.outcomes,
    }, indent=2))
    _dump_sample_episodes(out, cfg, spec, ecfg, args.sample_episodes, log)
    log(f"TSR {report.means['TSR']:.1f} +/- {report.stds['TSR']:.1f} over "
        f"{report.n_episodes} episodes (partition "
        f"{report.partition_sum():.2f}%)")
    return 0


def _dump_sample_episodes(out: Path, cfg: dict, spec: PolicySpec,
                          ecfg: EvalConfig, n: int, log) -> None:
    if n <= 0:
        return
    from .evaluation.specs import build_factory
    params = cfgmod.build_vehicle(cfg)
    factory = build_factory(spec, cfgmod.build_vocab(cfg), params)
    ep_dir = out / "episodes"
    ep_dir.mkdir(exist_ok=True)
    for i in range(min(n, ecfg.n_episodes)):
        ep_seed = ecfg.episode_seed(i)
        scenario = sample_scenario(ecfg.world, params, ep_seed,
                                   slot_choices=ecfg.slot_choices)
        result = run_episode(factory(i, ep_seed), scenario, params,
                             ecfg.episode)
        (ep_dir / f"ep_{i:04d}.jsonl").write_text(episode_to_jsonl(result))
        reportmod.trajectory_plot(scenario.lot,
                                  {result.outcome.value: result.trajectory},
                                  ep_dir / f"ep_{i:04d}.png")


ABLATION_ROWS = {
    "motion_only": dict(goal_tokens=False, waypoints=False, grad_attention=False),
    "goal": dict(goal_tokens=True, waypoints=False, grad_attention=False),
    "goal_attn": dict(goal_tokens=True, waypoints=False, grad_attention=True),
    "wp": dict(goal_tokens=False, waypoints=True, grad_attention=False),
    "wp_attn": dict(goal_tokens=False, waypoints=True, grad_attention=True),
    "goal_wp": dict(goal_tokens=True, waypoints=True, grad_attention=False),
    "full": dict(goal_tokens=True, waypoints=True, grad_attention=True),
}


def cmd_ablate(args, cfg: dict) -> int:
    data = _require_file(args.data, "dataset")
    motion = _require_file(args.motion, "motion checkpoint")
    out = run_dir(args.out, "ablate")
    cfgmod.echo_config(cfg, out)
    log = _log_to(out / "log.txt")
    dataset = load_dataset(data)
    vocab = cfgmod.build_vocab(cfg)
    params = cfgmod.build_vehicle(cfg)
    row_names = args.rows.split(",") if args.rows else list(ABLATION_ROWS)
    unknown = [r for r in row_names if r not in ABLATION_ROWS]
    if unknown:
        raise CliError(f"unknown ablation rows: {unknown}")
    seeds = [int(s) for s in args.train_seeds.split(",")]

    results: dict[str, dict[int, object]] = {}
    flags_by_name: dict[str, dict] = {}
    for name in row_names:
        flags = ABLATION_ROWS[name]
        flags_by_name[name] = {
            "motion_pred": True,
            "goal_token": flags["goal_tokens"],
            "waypoints": flags["waypoints"],
            "grad_attn": flags["grad_attention"],
        }
        per_seed = {}
        for seed in seeds:
            tdir = out / f"train_{name}_s{seed}"
            train_cfg = cfgmod.build_train_config(cfg, seed=seed, **flags)
            if args.epochs:
                train_cfg = replace(train_cfg, epochs=args.epochs)
            log(f"training {name} seed {seed} "
                f"({train_cfg.epochs} epochs)")
            summary = train(dataset, vocab, tdir, train_cfg)
            spec = _policy_spec(cfg, "learned", summary["best_checkpoint"],
                                motion, flags=flags)
            ecfg = _eval_config(cfg, seed, args.episodes,
                                list(cfg["eval"]["eval_slots"]))
            report = evaluate_spec(spec, ecfg, params, vocab,
                                   workers=args.workers,
                                   train_meta=dataset.meta)
            per_seed[seed] = report
            log(f"  {name} seed {seed}: TSR {report.means['TSR']:.1f} "
                f"NTSR {report.means['NTSR']:.1f}")
        results[name] = per_seed

    rows = []
    for name, per_seed in results.items():
        for seed, report in sorted(per_seed.items()):
            row = {"method": name, "train_seed": seed, **flags_by_name[name]}
            for metric in METRIC_OUTCOMES:
                row[metric] = (f"{report.means[metric]:.1f} +/- "
                               f"{report.stds[metric]:.1f}")
            row["episodes"] = report.n_episodes
            rows.append(row)
    reportmod.write_csv(out / "ablation.csv", rows)
    median_reports = {name: median_seed_report(per_seed)
                      for name, per_seed in results.items()}
    md_rows = reportmod.metrics_table_rows(median_reports, flags_by_name)
    reportmod.write_markdown(out / "ablation.md", md_rows,
                             title="Ablation matrix (median training seed)")
    reportmod.outcome_bars(median_reports, out / "ablation.png")
    (out / "ablation.json").write_text(json.dumps(
        {name: {seed: {"means": r.means, "stds": r.stds}
                for seed, r in per_seed.items()}
         for name, per_seed in results.items()}, indent=2))
    return 0


def cmd_noise_sweep(args, cfg: dict) -> int:
    ckpt = _require_file(args.checkpoint, "checkpoint")
    motion = _require_file(args.motion, "motion checkpoint")
    out = run_dir(args.out, "noise-sweep")
    cfgmod.echo_config(cfg, out)
    log = _log_to(out / "log.txt")
    vocab = cfgmod.build_vocab(cfg)
    params = cfgmod.build_vehicle(cfg)

    rows = []
    for method in ("learned", "modular"):
        base_tsr = None
        grid = ([("speed_pct", lvl) for lvl in cfg["noise"]["speed_levels"]]
                + [("target_m", lvl) for lvl in cfg["noise"]["target_levels"]])
        seen = set()
        for kind, level in grid:
            if (kind, level) in seen:
                continue
            seen.add((kind, level))
            noise = EvalNoise(
                speed_noise_pct=level if kind == "speed_pct" else 0.0,
                target_noise_m=level if kind == "target_m" else 0.0)
            if method == "learned":
                spec = _policy_spec(cfg, "learned", ckpt, motion, noise)
            else:
                spec = _policy_spec(cfg, "modular", motion=motion, noise=noise)
            ecfg = _eval_config(cfg, args.seed, args.episodes,
                                list(cfg["eval"]["eval_slots"]), noise)
            report = evaluate_spec(spec, ecfg, params, vocab,
                                   workers=args.workers)
            tsr = report.means["TSR"]
            if level == 0.0 and base_tsr is None:
                base_tsr = tsr
            rows.append({"method": method, "noise": kind, "level": level,
                         "tsr": tsr, "delta_tsr": tsr - (base_tsr or tsr)})
            log(f"{method} {kind}={level}: TSR {tsr:.1f}")
        # zero-level rows of the second axis share the same reference
        for row in rows:
            if row["method"] == method:
                row["delta_tsr"] = row["tsr"] - base_tsr
    reportmod.write_csv(out / "noise.csv", rows)
    reportmod.write_markdown(out / "noise.md", rows, title="Noise robustness")
    reportmod.noise_sweep_lines(rows, out / "noise.png")
    return 0


def cmd_compare_motion(args, cfg: dict) -> int:
    multi = _require_file(args.motion, "motion checkpoint")
    single = _require_file(args.motion_single, "single-frame checkpoint")
    ckpt = _require_file(args.checkpoint, "policy checkpoint")
    out = run_dir(args.out, "compare-motion")
    cfgmod.echo_config(cfg, out)
    log = _log_to(out / "log.txt")
    vocab = cfgmod.build_vocab(cfg)
    params = cfgmod.build_vehicle(cfg)

    # held-out trajectories from a policy the predictors never saw in
    # training (the learned policy vs the expert pipeline that made the data)
    from .evaluation.specs import build_factory
    spec = _policy_spec(cfg, "learned", ckpt, None)
    factory = build_factory(spec, vocab, params)
    ecfg = _eval_config(cfg, args.seed, None,
                        list(cfg["eval"]["eval_slots"]))
    episodes = []
    for i in range(args.episodes or 20):
        ep_seed = ecfg.episode_seed(i)
        scenario = sample_scenario(ecfg.world, params, ep_seed,
                                   slot_choices=ecfg.slot_choices)
        episodes.append(run_episode(factory(i, ep_seed), scenario, params,
                                    ecfg.episode))
    variants = {
        "multi_frame": MotionPredictor.load(multi),
        "single_frame": MotionPredictor.load(single),
    }
    rows = motion_comparison(variants, episodes, params)
    reportmod.write_csv(out / "motion_comparison.csv", rows)
    reportmod.write_markdown(out / "motion_comparison.md", rows,
                             title="Displacement-estimator comparison")
    for row in rows:
        log(f"{row['method']}: ADE {row['ade_m']:.3f} FDE {row['fde_m']:.3f} "
            f"var {row['fde_variance']:.4f}")
    return 0


def cmd_plan(args, cfg: dict) -> int:
    lot_file = _require_file(args.lot, "lot description")
    out = run_dir(args.out, "plan")
    cfgmod.echo_config(cfg, out)
    spec = yaml.safe_load(Path(lot_file).read_text())
    slots = [Slot(s["x"], s["y"], math.radians(s["psi_deg"]),
                  s.get("depth", cfg["world"]["slot_depth_m"]),
                  s.get("width", cfg["world"]["slot_width_m"]))
             for s in spec["slots"]]
    obstacles = [OrientedRect(o["x"], o["y"], math.radians(o["psi_deg"]),
                              o["length"], o["width"])
                 for o in spec.get("obstacles", [])]
    lot = ParkingLot(bounds=tuple(spec["bounds"]), slots=slots,
                     obstacles=obstacles,
                     target_slot_index=spec["target_slot_index"])
    start = spec["start"]
    params = cfgmod.build_vehicle(cfg)
    grid = grid_from_lot(lot, params, cfg["planner"]["map_resolution"])
    from .planner.pipeline import rear_axle_goal
    goal = rear_axle_goal(lot.target_slot, params)
    path = plan_hybrid_astar(
        (start["x"], start["y"], math.radians(start["psi_deg"])), goal,
        grid, params, cfgmod.build_planner_params(cfg))
    rows = [{"x": f"{p[0]:.4f}", "y": f"{p[1]:.4f}", "psi": f"{p[2]:.5f}",
             "dir": "fwd" if p[3].value > 0 else "rev"} for p in path.poses]
    reportmod.write_csv(out / "path.csv", rows, ["x", "y", "psi", "dir"])

    class _Pt:
        def __init__(self, x, y):
            self.state = VehicleState(x, y, 0.0)
    reportmod.trajectory_plot(
        lot, {"plan": [_Pt(p[0], p[1]) for p in path.poses]}, out / "plan.png")
    print(f"planned {path.cumulative_length_m:.2f} m, "
          f"{len(path.poses)} poses -> {out / 'path.csv'}")
    return 0


def cmd_render(args, cfg: dict) -> int:
    out = run_dir(args.out, "render")
    cfgmod.echo_config(cfg, out)
    params = cfgmod.build_vehicle(cfg)
    scenario = sample_scenario(cfgmod.build_world(cfg), params, args.seed)
    grid = render_bev(scenario.start, scenario.lot, cfgmod.build_bev_spec(cfg),
                      noise_prob=args.noise, rng_seed=args.seed, params=params)
    write_pgm(grid, out / "bev.pgm")
    reportmod.trajectory_plot(scenario.lot, {}, out / "lot.png")
    print(f"rendered scenario seed {args.seed} -> {out}")
    return 0


def cmd_inspect_attention(args, cfg: dict) -> int:
    data = _require_file(args.data, "dataset")
    ckpt = _require_file(args.checkpoint, "checkpoint")
    out = run_dir(args.out, "inspect-attention")
    cfgmod.echo_config(cfg, out)
    log = _log_to(out / "log.txt")
    vocab = cfgmod.build_vocab(cfg)
    dataset = load_dataset(data)
    nets = {}
    train_cfg = cfgmod.build_train_config(cfg)
    nets["with_attention"] = load_policy_net(
        ckpt, vocab, cfgmod.build_policy_config(cfg, train_cfg))
    if args.baseline_checkpoint:
        base_cfg = cfgmod.build_train_config(cfg, grad_attention=False)
        nets["without_attention"] = load_policy_net(
            _require_file(args.baseline_checkpoint, "baseline checkpoint"),
            vocab, cfgmod.build_policy_config(cfg, base_cfg))
    rows = attention_report(nets, dataset, n_frames=args.frames,
                            seed=args.seed, dump_dir=out / "maps")
    reportmod.write_csv(out / "focus.csv", rows)
    for row in rows:
        log(f"{row['method']}: median focus ratio "
            f"{row['median_focus_ratio']:.3f} over {row['frames']} frames")
    # render the first dumped map as a PNG next to the PGMs
    return 0


def cmd_profile(args, cfg: dict) -> int:
    out = run_dir(args.out, "profile")
    cfgmod.echo_config(cfg, out)
    log = _log_to(out / "log.txt")
    vocab = cfgmod.build_vocab(cfg)
    params = cfgmod.build_vehicle(cfg)
    from .evaluation.specs import build_factory
    factories = {}
    if args.checkpoint:
        spec = _policy_spec(cfg, "learned",
                            _require_file(args.checkpoint, "checkpoint"),
                            args.motion)
        factories["learned"] = build_factory(spec, vocab, params)
    factories["modular"] = build_factory(
        _policy_spec(cfg, "modular", motion=args.motion), vocab, params)
    factories["brake"] = build_factory(_policy_spec(cfg, "brake"), vocab,
                                       params)
    ecfg = _eval_config(cfg, args.seed, None, list(cfg["eval"]["eval_slots"]))
    rows = profile_costs(factories, ecfg, params, n_episodes=args.episodes or 5)
    reportmod.write_csv(out / "costs.csv", rows,
                        ["method", "mem_bytes", "cpu_s", "episode_s"])
    for row in rows:
        log(f"{row['method']}: cpu {row['cpu_s']:.2f}s/episode, "
            f"wall {row['episode_s']:.2f}s")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="parklab",
        description="Desk-scale parking lab: simulator, expert pipeline, "
                    "imitation policy, closed-loop evaluation.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML config file")
        p.add_argument("--set", action="append", default=[], metavar="S.K=V",
                       help="override a config key (section.key=value)")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=os.environ.get("PARKLAB_OUT", "runs"),
                       help="output root directory")
        p.add_argument("--workers", type=int,
                       default=int(os.environ.get("PARKLAB_WORKERS",
                                                  os.cpu_count() or 1)),
                       help="episode-evaluation parallelism")

    p = sub.add_parser("collect", help="collect expert demonstrations")
    common(p)
    p.add_argument("--episodes", type=int, default=50)
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("train", help="train the parking policy")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--no-goal-tokens", action="store_true")
    p.add_argument("--no-waypoints", action="store_true")
    p.add_argument("--no-grad-attention", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("train-motion", help="train the displacement predictor")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--single-frame", action="store_true")
    p.set_defaults(func=cmd_train_motion)

    p = sub.add_parser("eval", help="closed-loop evaluation")
    common(p)
    p.add_argument("--policy", choices=("learned", "modular", "brake"),
                   default="learned")
    p.add_argument("--checkpoint")
    p.add_argument("--motion")
    p.add_argument("--data", help="training dataset (held-out separation check)")
    p.add_argument("--episodes", type=int)
    p.add_argument("--speed-noise", type=float, default=0.0)
    p.add_argument("--target-noise", type=float, default=0.0)
    p.add_argument("--easy", action="store_true",
                   help="near starts, clean observations")
    p.add_argument("--sample-episodes", type=int, default=3,
                   help="episodes to dump as JSONL + figures")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train + evaluate the flag matrix")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--motion", required=True)
    p.add_argument("--rows", help="comma-separated subset of: "
                   + ",".join(ABLATION_ROWS))
    p.add_argument("--train-seeds", default="0,1,2")
    p.add_argument("--epochs", type=int)
    p.add_argument("--episodes", type=int)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("noise-sweep", help="robustness to speed/target noise")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--motion", required=True)
    p.add_argument("--episodes", type=int)
    p.set_defaults(func=cmd_noise_sweep)

    p = sub.add_parser("compare-motion",
                       help="multi- vs single-frame displacement estimation")
    common(p)
    p.add_argument("--motion", required=True)
    p.add_argument("--motion-single", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episodes", type=int)
    p.set_defaults(func=cmd_compare_motion)

    p = sub.add_parser("plan", help="plan a path in a described lot")
    common(p)
    p.add_argument("--lot", required=True, help="YAML lot description")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("render", help="render a scenario's BEV to PGM")
    common(p)
    p.add_argument("--noise", type=float, default=0.0)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("inspect-attention", help="attention focus diagnostics")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--baseline-checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--frames", type=int, default=200)
    p.set_defaults(func=cmd_inspect_attention)

    p = sub.add_parser("profile", help="wall/cpu/memory per episode")
    common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--motion")
    p.add_argument("--episodes", type=int)
    p.set_defaults(func=cmd_profile)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, args.set)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    try:
        return args.func(args, cfg)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
