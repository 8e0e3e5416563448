"""Closed-loop evaluation: metric suite, ablation matrix, noise sweeps,
motion-prediction comparison, attention diagnostics, cost profiling.
"""
from __future__ import annotations

import math
import resource
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from ..data import Dataset
from ..motion import HISTORY_LEN, MotionPredictor, PoseEstimator
from ..nn.checkpoint import load_tensors
from ..nn import ParameterSet
from ..policy import ParkingPolicyNet, PolicyConfig, one_hot_bev
from ..sim.episode import (
    EpisodeConfig,
    EpisodeResult,
    Outcome,
    STEPS_PER_CONTROL,
    run_episode,
)
from ..sim.vehicle import VehicleParams
from ..sim.world import WorldConfig, sample_scenario
from ..tokens import TokenVocabulary
from .metrics import MetricsReport, compute_metrics, scenario_fingerprint
from .policies import EvalNoise, LearnedParkingPolicy, make_modular_policy

EVAL_SEED_BASE = 1_000_000_000   # disjoint from small collection seeds


@dataclass
class EvalConfig:
    n_episodes: int = 100
    seed: int = 0
    world: WorldConfig = field(default_factory=WorldConfig)
    slot_choices: list[int] | None = None    # held-out slots
    episode: EpisodeConfig = field(default_factory=EpisodeConfig)
    noise: EvalNoise = field(default_factory=EvalNoise)
    bev_noise: float = 0.0
    salt: str = "eval"

    def episode_seed(self, index: int) -> int:
        return EVAL_SEED_BASE + self.seed * 100_003 + index

    def fingerprint(self) -> str:
        return scenario_fingerprint(self.slot_choices or [], self.seed,
                                    self.salt)


PolicyFactory = Callable[[int, int], Callable]


def evaluate_policy(policy_factory: PolicyFactory, cfg: EvalConfig,
                    params: VehicleParams,
                    train_meta: dict | None = None) -> MetricsReport:
    """Run seeded scenarios and aggregate the outcome partition.

    train_meta (a dataset sidecar) proves held-out separation: evaluation
    slots must not intersect the training collection's slots.
    """
    if cfg.n_episodes < 20:
        raise ValueError("need at least 20 episodes for rate estimates")
    if train_meta is not None and cfg.slot_choices is not None:
        train_slots = set(train_meta.get("slot_choices") or [])
        overlap = train_slots & set(cfg.slot_choices)
        if overlap:
            raise ValueError(f"evaluation slots overlap training: {overlap}")

    outcomes = []
    wall, cpu = [], []
    for i in range(cfg.n_episodes):
        ep_seed = cfg.episode_seed(i)
        scenario = sample_scenario(cfg.world, params, ep_seed,
                                   slot_choices=cfg.slot_choices)
        policy = policy_factory(i, ep_seed)
        t_cpu = time.process_time()
        result = run_episode(policy, scenario, params, cfg.episode)
        cpu.append(time.process_time() - t_cpu)
        wall.append(result.wall_time_s)
        outcomes.append(result.outcome)
    report = compute_metrics(outcomes, bootstrap_seed=cfg.seed,
                             fingerprint=cfg.fingerprint())
    report.extra["wall_time_mean_s"] = float(np.mean(wall))
    report.extra["cpu_time_mean_s"] = float(np.mean(cpu))
    return report


# ---------------------------------------------------------------------------
# learned-policy plumbing


def load_policy_net(path, vocab: TokenVocabulary,
                    config: PolicyConfig) -> ParkingPolicyNet:
    tensors = load_tensors(path)
    params = ParameterSet()
    for name, arr in tensors.items():
        params.add(name, arr)
    return ParkingPolicyNet(config, vocab, params=params)


def learned_policy_factory(net: ParkingPolicyNet, params: VehicleParams,
                           motion: MotionPredictor | None,
                           cfg: EvalConfig) -> PolicyFactory:
    def factory(index: int, ep_seed: int):
        return LearnedParkingPolicy(net, params, motion=motion,
                                    bev_noise=cfg.bev_noise,
                                    noise=cfg.noise, noise_seed=ep_seed + 7)
    return factory


def modular_policy_factory(params: VehicleParams,
                           motion: MotionPredictor | None,
                           cfg: EvalConfig,
                           pipeline_cfg=None) -> PolicyFactory:
    def factory(index: int, ep_seed: int):
        return make_modular_policy(params, pipeline_cfg, motion=motion,
                                   noise=cfg.noise, noise_seed=ep_seed + 7)
    return factory


# ---------------------------------------------------------------------------
# ablation matrix


@dataclass
class AblationRow:
    name: str
    motion_pred: bool
    goal_tokens: bool
    waypoints: bool
    grad_attention: bool
    # checkpoint path per training seed; missing file -> row skipped
    checkpoints: dict[int, str] = field(default_factory=dict)


def run_ablation_matrix(rows: list[AblationRow], vocab: TokenVocabulary,
                        params: VehicleParams, motion: MotionPredictor | None,
                        cfg: EvalConfig,
                        log=None) -> dict[str, dict[int, MetricsReport]]:
    """Evaluate each flag combination across its training seeds."""
    results: dict[str, dict[int, MetricsReport]] = {}
    for row in rows:
        per_seed: dict[int, MetricsReport] = {}
        for train_seed, ckpt in sorted(row.checkpoints.items()):
            if not Path(ckpt).exists():
                if log:
                    log(f"{row.name} seed {train_seed}: checkpoint missing, skipped")
                continue
            pc = PolicyConfig(use_goal_tokens=row.goal_tokens,
                              use_waypoints=row.waypoints,
                              use_grad_attention=row.grad_attention)
            net = load_policy_net(ckpt, vocab, pc)
            factory = learned_policy_factory(
                net, params, motion if row.motion_pred else None, cfg)
            report = evaluate_policy(factory, cfg, params)
            per_seed[train_seed] = report
            if log:
                log(f"{row.name} seed {train_seed}: "
                    f"TSR={report.means['TSR']:.1f}")
        if per_seed:
            results[row.name] = per_seed
    return results


def median_seed_report(per_seed: dict[int, MetricsReport]) -> MetricsReport:
    """Report of the seed with the median TSR (lower seed on ties)."""
    items = sorted(per_seed.items())
    ranked = sorted(items, key=lambda kv: (kv[1].means["TSR"], -kv[0]))
    return ranked[len(ranked) // 2][1]


# ---------------------------------------------------------------------------
# noise robustness


def noise_sweep(policy_builder: Callable[[EvalNoise], PolicyFactory],
                cfg: EvalConfig,
                params: VehicleParams,
                speed_levels=(0.0, 10.0, 30.0),
                target_levels=(0.0, 0.2, 0.5)) -> list[dict]:
    """TSR change vs the zero-noise reference for each noise axis."""
    def tsr_at(noise: EvalNoise) -> float:
        factory = policy_builder(noise)
        report = evaluate_policy(factory, cfg, params)
        return report.means["TSR"]

    rows = []
    base = tsr_at(EvalNoise())
    for level in speed_levels:
        tsr = base if level == 0.0 else tsr_at(EvalNoise(speed_noise_pct=level))
        rows.append({"noise": "speed_pct", "level": level, "tsr": tsr,
                     "delta_tsr": tsr - base})
    for level in target_levels:
        tsr = base if level == 0.0 else tsr_at(EvalNoise(target_noise_m=level))
        rows.append({"noise": "target_m", "level": level, "tsr": tsr,
                     "delta_tsr": tsr - base})
    return rows


# ---------------------------------------------------------------------------
# motion-prediction comparison


class _FrameObs:
    __slots__ = ("tick", "state")

    def __init__(self, tick, state):
        self.tick = tick
        self.state = state


def open_loop_pose_errors(result: EpisodeResult, predictor: MotionPredictor,
                          params: VehicleParams) -> np.ndarray:
    """Per-tick position-estimate error along a recorded trajectory."""
    frames = result.trajectory[::STEPS_PER_CONTROL]
    estimator = PoseEstimator(predictor, params)
    errors = []
    last_cmd = frames[0].cmd
    for tick, pt in enumerate(frames):
        obs = _FrameObs(tick, pt.state)
        if tick == 0:
            estimator.reset(obs)
            ex, ey = pt.state.x_m, pt.state.y_m
        else:
            ex, ey, _ = estimator.estimate(obs, pt.state, last_cmd)
        last_cmd = pt.cmd
        errors.append(math.hypot(ex - pt.state.x_m, ey - pt.state.y_m))
    return np.array(errors)


def motion_comparison(variants: dict[str, MotionPredictor],
                      episodes: list[EpisodeResult],
                      params: VehicleParams) -> list[dict]:
    """ADE/FDE/variance per variant over recorded held-out episodes."""
    rows = []
    for name, predictor in variants.items():
        ades, fdes = [], []
        for result in episodes:
            errs = open_loop_pose_errors(result, predictor, params)
            ades.append(float(errs.mean()))
            fdes.append(float(errs[-1]))
        rows.append({
            "method": name,
            "ade_m": float(np.mean(ades)),
            "fde_m": float(np.mean(fdes)),
            "fde_variance": float(np.var(fdes)),
            "episodes": len(episodes),
        })
    return rows


# ---------------------------------------------------------------------------
# cost profiling


def profile_costs(factories: dict[str, PolicyFactory], cfg: EvalConfig,
                  params: VehicleParams, n_episodes: int = 5) -> list[dict]:
    rows = []
    for name, factory in factories.items():
        cpu0 = time.process_time()
        wall = []
        for i in range(n_episodes):
            scenario = sample_scenario(cfg.world, params,
                                       cfg.episode_seed(i),
                                       slot_choices=cfg.slot_choices)
            result = run_episode(factory(i, cfg.episode_seed(i)), scenario,
                                 params, cfg.episode)
            wall.append(result.wall_time_s)
        cpu = time.process_time() - cpu0
        rows.append({
            "method": name,
            "mem_bytes": resource.getrusage(resource.RUSAGE_SELF).ru_maxrss * 1024,
            "cpu_s": cpu / n_episodes,
            "episode_s": float(np.mean(wall)),
        })
    return rows


# ---------------------------------------------------------------------------
# attention diagnostics


def feature_cell_extent(bev_spec_size: int, resolution: float,
                        feat_size: int) -> float:
    """Meters covered by one attention cell."""
    return bev_spec_size * resolution / feat_size


def focus_ratio(attention: np.ndarray, goal_ego: tuple[float, float],
                cell_m: float, radius_m: float = 3.0) -> float | None:
    """Mean attention within radius_m of the goal cell over mean elsewhere.

    None when the goal falls outside the map or a region is empty.
    """
    size = attention.shape[0]
    half = size * cell_m / 2.0
    gx, gy = goal_ego
    if not (-half <= gx < half and -half <= gy < half):
        return None
    centers = (np.arange(size) + 0.5) * cell_m - half
    cx, cy = np.meshgrid(centers, centers, indexing="ij")
    near = np.hypot(cx - gx, cy - gy) <= radius_m
    if near.all() or not near.any():
        return None
    near_mean = float(attention[near].mean())
    far_mean = float(attention[~near].mean())
    if far_mean <= 0.0:
        return None
    return near_mean / far_mean


def attention_report(nets: dict[str, ParkingPolicyNet], dataset: Dataset,
                     n_frames: int = 200, seed: int = 0,
                     dump_dir=None) -> list[dict]:
    """Median focus ratio per checkpoint over held-out frames."""
    from ..sim.bev import array_to_pgm
    import json

    rng = np.random.default_rng(seed)
    idx = rng.choice(len(dataset), size=min(n_frames, len(dataset)),
                     replace=False)
    grid = dataset.grid_size
    rows = []
    for name, net in nets.items():
        cell_m = feature_cell_extent(grid, 0.25, net.config.bev_feat_size)
        ratios = []
        for k, i in enumerate(idx):
            rec = dataset.records[i]
            bev = one_hot_bev(rec["bev"][None], grid)
            ego = rec["ego"][None].astype(np.float32)
            goal = rec["goal"][None].astype(np.float32)
            from ..nn import Tape
            tape = Tape()
            leaves = net.params.bind(tape)
            fused, _ = net.encode_inputs(leaves, bev, ego, goal)
            feat = net.bev_project(leaves, fused)
            if net.config.use_grad_attention:
                attn = net.predict_attention(leaves, feat).data[0]
            else:
                attn = np.ones((net.config.bev_feat_size,) * 2,
                               dtype=np.float32)
            ratio = focus_ratio(attn, (float(rec["goal"][0]),
                                       float(rec["goal"][1])), cell_m)
            if ratio is not None:
                ratios.append(ratio)
            if dump_dir is not None and k < 8:
                dump_dir = Path(dump_dir)
                dump_dir.mkdir(parents=True, exist_ok=True)
                array_to_pgm(attn, dump_dir / f"{name}_frame{k}.pgm")
                meta = {"cell_extent_m": cell_m,
                        "origin": "ego-centered, x-forward",
                        "goal_ego_m": [float(rec["goal"][0]),
                                       float(rec["goal"][1])]}
                (dump_dir / f"{name}_frame{k}.json").write_text(
                    json.dumps(meta, indent=2))
        rows.append({
            "method": name,
            "median_focus_ratio": float(np.median(ratios)) if ratios else float("nan"),
            "frames": len(ratios),
        })
    return rows
