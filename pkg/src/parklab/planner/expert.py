"""Expert demonstration collection from the modular pipeline.

Episodes run with ground-truth maps and poses; only smooth successful
parks survive the filter and become fixed-layout training records.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..data import CTRL_TOKENS, WP_TOKENS, record_dtype, save_dataset
from ..geometry import normalize_angle
from ..sim.bev import BevSpec, render_bev
from ..sim.episode import (
    EpisodeConfig,
    EpisodeResult,
    Outcome,
    STEPS_PER_CONTROL,
    run_episode,
)
from ..sim.vehicle import ControlCommand, Gear, VehicleParams, VehicleState
from ..sim.world import Scenario, WorldConfig, sample_scenario
from ..tokens import TokenVocabulary, discretize, goal_in_ego_frame
from .pipeline import ModularPipelinePolicy, PipelineConfig


@dataclass(frozen=True)
class SmoothnessFilter:
    max_steering_jump: float = 0.2   # per control step
    max_gear_switches: int = 4


@dataclass
class CollectionConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    smoothness: SmoothnessFilter = field(default_factory=SmoothnessFilter)
    bev_spec: BevSpec = field(default_factory=BevSpec)
    observation_noise: float = 0.02   # label-flip prob on recorded BEV inputs
    slot_choices: list[int] | None = None
    time_limit_s: float = 40.0
    min_retention: float = 0.10


@dataclass
class CollectionStats:
    attempted: int = 0
    retained: int = 0
    outcomes: dict = field(default_factory=dict)
    rejected_rough: int = 0
    waypoint_clips: int = 0
    frames: int = 0

    @property
    def retention(self) -> float:
        return self.retained / self.attempted if self.attempted else 0.0


def control_frames(result: EpisodeResult):
    """(state, command) at every 0.1 s control step."""
    return [(pt.state, pt.cmd) for pt in result.trajectory[::STEPS_PER_CONTROL]]


def is_smooth(result: EpisodeResult, filt: SmoothnessFilter) -> bool:
    frames = control_frames(result)
    steer = [cmd.steering for _, cmd in frames]
    jumps = [abs(b - a) for a, b in zip(steer, steer[1:])]
    if jumps and max(jumps) > filt.max_steering_jump:
        return False
    gears = [cmd.gear for _, cmd in frames]
    switches = sum(1 for a, b in zip(gears, gears[1:]) if a is not b)
    return switches <= filt.max_gear_switches


def _rest_command(last: ControlCommand) -> ControlCommand:
    return ControlCommand(steering=0.0, throttle=0.0, brake=1.0, gear=last.gear)


def episode_records(result: EpisodeResult, scenario: Scenario,
                    params: VehicleParams, vocab: TokenVocabulary,
                    cfg: CollectionConfig, stats: CollectionStats) -> np.ndarray:
    """One record per control frame, futures padded with the rest pose."""
    frames = control_frames(result)
    n = len(frames)
    goal_pose = scenario.lot.target_slot.pose()
    dt = record_dtype(cfg.bev_spec.size)
    out = np.zeros(n, dtype=dt)

    final_state = result.final_state
    for i, (state, cmd) in enumerate(frames):
        bev = render_bev(state, scenario.lot, cfg.bev_spec,
                         noise_prob=cfg.observation_noise,
                         rng_seed=hash((scenario.seed, "obs", i)) & 0x7FFFFFFF,
                         params=params)
        seg = render_bev(state, scenario.lot, cfg.bev_spec, noise_prob=0.0,
                         params=params)

        future_cmds, future_states = [], []
        for k in range(1, 5):
            if i + k < n:
                s2, c2 = frames[i + k]
            else:
                s2, c2 = final_state, _rest_command(frames[-1][1])
            future_cmds.append(c2)
            future_states.append(s2)

        ctrl_seq = vocab.encode_control_sequence(future_cmds)[1:-1]

        c, s = math.cos(state.psi_rad), math.sin(state.psi_rad)
        wp_tokens = []
        for s2 in future_states:
            dx, dy = s2.x_m - state.x_m, s2.y_m - state.y_m
            ex = dx * c + dy * s
            ey = -dx * s + dy * c
            edeg = math.degrees(normalize_angle(s2.psi_rad - state.psi_rad))
            if abs(ex) > 6.0 or abs(ey) > 6.0 or abs(edeg) > 40.0:
                stats.waypoint_clips += 1
            wp_tokens.append(vocab.encode_channel(
                "wp_dx", discretize(ex, vocab.waypoint_xy)))
            wp_tokens.append(vocab.encode_channel(
                "wp_dy", discretize(ey, vocab.waypoint_xy)))
            wp_tokens.append(vocab.encode_channel(
                "wp_dpsi", discretize(edeg, vocab.waypoint_heading_deg)))

        gx, gy, gpsi = goal_in_ego_frame(goal_pose,
                                         (state.x_m, state.y_m, state.psi_rad))
        a_long = state.a_mps2[0] * c + state.a_mps2[1] * s
        a_lat = -state.a_mps2[0] * s + state.a_mps2[1] * c

        nxt = frames[i + 1][0] if i + 1 < n else final_state
        rec = out[i]
        rec["bev"] = bev.cells.ravel()
        rec["ego"] = (state.v_mps, a_long, a_lat, s, c)
        rec["goal"] = (gx, gy, math.sin(gpsi), math.cos(gpsi))
        rec["ctrl_tokens"] = ctrl_seq
        rec["wp_tokens"] = wp_tokens
        rec["seg"] = seg.cells.ravel()
        rec["pose"] = (state.x_m, state.y_m, state.psi_rad)
        rec["disp"] = (nxt.x_m - state.x_m, nxt.y_m - state.y_m)
    return out


def collect_expert_dataset(path, n_episodes: int, seed: int,
                           params: VehicleParams | None = None,
                           cfg: CollectionConfig | None = None,
                           vocab: TokenVocabulary | None = None
                           ) -> CollectionStats:
    """Run seeded expert episodes, filter, and write the dataset + sidecar."""
    if n_episodes <= 0:
        raise ValueError("n_episodes must be positive")
    params = params or VehicleParams()
    cfg = cfg or CollectionConfig()
    vocab = vocab or TokenVocabulary()

    stats = CollectionStats()
    chunks: list[np.ndarray] = []
    episodes: list[tuple[int, int]] = []
    offset = 0
    for i in range(n_episodes):
        scenario = sample_scenario(cfg.world, params, seed + i,
                                   slot_choices=cfg.slot_choices)
        policy = ModularPipelinePolicy(params, cfg.pipeline)
        result = run_episode(policy, scenario, params,
                             EpisodeConfig(time_limit_s=cfg.time_limit_s))
        stats.attempted += 1
        name = result.outcome.value
        stats.outcomes[name] = stats.outcomes.get(name, 0) + 1
        if result.outcome is not Outcome.TARGET_SUCCESS:
            continue
        if not is_smooth(result, cfg.smoothness):
            stats.rejected_rough += 1
            continue
        recs = episode_records(result, scenario, params, vocab, cfg, stats)
        chunks.append(recs)
        episodes.append((offset, len(recs)))
        offset += len(recs)
        stats.retained += 1

    if stats.retention < cfg.min_retention:
        raise RuntimeError(
            f"expert retention {stats.retention:.1%} below "
            f"{cfg.min_retention:.0%} ({stats.outcomes})")

    records = (np.concatenate(chunks) if chunks
               else np.zeros(0, dtype=record_dtype(cfg.bev_spec.size)))
    stats.frames = len(records)
    meta = {
        "seed": seed,
        "n_episodes": n_episodes,
        "retained": stats.retained,
        "retention": stats.retention,
        "outcomes": stats.outcomes,
        "waypoint_clips": stats.waypoint_clips,
        "clip_rate": (stats.waypoint_clips / (4 * len(records))
                      if len(records) else 0.0),
        "observation_noise": cfg.observation_noise,
        "slot_choices": cfg.slot_choices,
        "avg_frames_per_episode": (stats.frames / stats.retained
                                   if stats.retained else 0.0),
    }
    save_dataset(path, records, cfg.bev_spec.size, vocab, episodes, meta)
    return stats
