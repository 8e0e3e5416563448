"""Run configuration: one YAML file, strict keys, override flags.

Sections: world, planner, network, tokenizer, train, eval, noise. Every
tunable default lives here; the resolved config is echoed into each output
directory so any run is reproducible from (config, seed) alone.
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass
from pathlib import Path

import yaml

from .planner.hybrid_astar import PlannerParams
from .planner.pid import PidGains, SpeedProfile
from .planner.pipeline import PipelineConfig
from .policy import PolicyConfig
from .sim.bev import BevSpec
from .sim.episode import EpisodeConfig, OutcomeThresholds
from .sim.vehicle import VehicleParams
from .sim.world import WorldConfig
from .tokens import BinSpec, TokenVocabulary
from .train import TrainConfig


class ConfigError(ValueError):
    pass


DEFAULTS: dict = {
    "world": {
        "lot_width_m": 50.0,
        "lot_height_m": 40.0,
        "slots_per_row": 16,
        "slot_width_m": 2.8,
        "slot_depth_m": 5.5,
        "slot_pitch_m": 3.0,
        "row_margin_m": 1.0,
        "occupancy": 0.5,
        "parked_length_m": 4.4,
        "parked_width_m": 1.9,
        "parked_jitter_m": 0.12,
        "parked_jitter_rad": 0.05,
        "start_dist_min_m": 6.0,
        "start_dist_max_m": 14.0,
        "start_lateral_margin_m": 3.0,
        "wheelbase_m": 2.8,
        "body_length_m": 4.4,
        "body_width_m": 1.9,
        "max_steer_rad": 0.6,
        "max_speed_mps": 3.0,
        "max_accel_mps2": 2.0,
        "max_brake_mps2": 4.0,
        "bev_size": 96,
        "bev_resolution_m": 0.25,
    },
    "planner": {
        "arc_length_m": 1.0,
        "substep_m": 0.1,
        "xy_bucket_m": 0.5,
        "heading_bucket_deg": 15.0,
        "reverse_penalty_per_m": 1.0,
        "direction_switch_penalty": 5.0,
        "steer_penalty_per_m": 0.2,
        "goal_xy_tol_m": 0.25,
        "goal_heading_tol_deg": 5.0,
        "node_budget": 30000,
        "replan_every": 30,
        "commit_radius_m": 4.0,
        "dock_length_m": 2.5,
        "inflation_margin_m": 0.25,
        "plan_steer_fraction": 0.85,
        "map_resolution": 0.25,
        "k_p": 1.2,
        "k_i": 0.05,
        "k_d": 1.8,
        "k_p_v": 3.0,
        "k_d_v": 0.0,
        "lookahead_m": 1.2,
        "steer_slew_per_step": 0.15,
        "cruise_mps": 2.0,
        "approach_mps": 0.5,
        "decel_mps2": 0.8,
        "stop_within_m": 0.25,
    },
    "network": {
        "conv_channels": [8, 16, 32],
        "d_bev": 128,
        "d_ego": 32,
        "d_goal": 32,
        "bev_feat_channels": 16,
        "bev_feat_size": 12,
        "attn_hidden": 8,
        "embed_dim": 48,
        "decoder_hidden": 96,
        "waypoint_hidden": 192,
        "seg_channels": [16, 8],
        "attn_stop_grad": False,
    },
    "tokenizer": {
        "steering_bins": 100,
        "throttle_bins": 50,
        "brake_bins": 50,
        "waypoint_bins": 200,
        "waypoint_xy_range_m": 6.0,
        "waypoint_heading_range_deg": 40.0,
    },
    "train": {
        "lr": 1.0e-3,
        "batch_size": 32,
        "epochs": 20,
        "val_fraction": 0.18,
        "goal_tokens": True,
        "waypoints": True,
        "grad_attention": True,
        "caa_from_predicted": False,
        "w_control": 1.0,
        "w_waypoint": 1.0,
        "w_seg": 1.0,
        "w_attn": 1.0,
        "divergence_factor": 10.0,
        "motion_epochs": 30,
        "motion_lr": 1.0e-3,
        "motion_batch_size": 64,
    },
    "eval": {
        "n_episodes": 100,
        "time_limit_s": 40.0,
        "rest_speed_mps": 0.05,
        "rest_hold_s": 1.0,
        "lateral_tol_m": 0.6,
        "longitudinal_tol_m": 1.0,
        "heading_tol_deg": 10.0,
        "train_slots": list(range(0, 32, 2)),
        "eval_slots": list(range(1, 32, 2)),
        "bev_noise": 0.0,
        "observation_noise": 0.02,
        "motion_pred": True,
        "execute_all": False,
        "easy_start_min_m": 5.0,
        "easy_start_max_m": 8.0,
    },
    "noise": {
        "speed_levels": [0.0, 10.0, 30.0],
        "target_levels": [0.0, 0.2, 0.5],
    },
}


def _validate(resolved: dict, user: dict) -> list[str]:
    errors = []
    for section, values in user.items():
        if section not in resolved:
            errors.append(f"unknown section {section!r}")
            continue
        if not isinstance(values, dict):
            errors.append(f"section {section!r} must be a mapping")
            continue
        for key in values:
            if key not in resolved[section]:
                errors.append(f"unknown key {section}.{key}")
    return errors


def parse_overrides(pairs: list[str]) -> dict:
    out: dict = {}
    errors = []
    for pair in pairs or []:
        if "=" not in pair:
            errors.append(f"override {pair!r} is not section.key=value")
            continue
        key, _, raw = pair.partition("=")
        if "." not in key:
            errors.append(f"override key {key!r} is not section.key")
            continue
        section, _, name = key.partition(".")
        out.setdefault(section, {})[name] = yaml.safe_load(raw)
    if errors:
        raise ConfigError("; ".join(errors))
    return out


def load_config(path=None, overrides: list[str] | None = None) -> dict:
    """Defaults, optionally overlaid with a YAML file and --set overrides."""
    resolved = copy.deepcopy(DEFAULTS)
    layers = []
    if path is not None:
        loaded = yaml.safe_load(Path(path).read_text()) or {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        layers.append(loaded)
    if overrides:
        layers.append(parse_overrides(overrides))
    errors = []
    for layer in layers:
        errors.extend(_validate(resolved, layer))
    if errors:
        raise ConfigError("invalid configuration: " + "; ".join(errors))
    for layer in layers:
        for section, values in layer.items():
            resolved[section].update(values)
    return resolved


def echo_config(resolved: dict, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(
        yaml.safe_dump(resolved, sort_keys=True))


# ---------------------------------------------------------------------------
# typed builders


def build_vehicle(cfg: dict) -> VehicleParams:
    w = cfg["world"]
    return VehicleParams(
        wheelbase_m=w["wheelbase_m"], body_length_m=w["body_length_m"],
        body_width_m=w["body_width_m"], max_steer_rad=w["max_steer_rad"],
        max_speed_mps=w["max_speed_mps"], max_accel_mps2=w["max_accel_mps2"],
        max_brake_mps2=w["max_brake_mps2"])


def build_world(cfg: dict, easy: bool = False) -> WorldConfig:
    w = cfg["world"]
    e = cfg["eval"]
    return WorldConfig(
        lot_width_m=w["lot_width_m"], lot_height_m=w["lot_height_m"],
        slots_per_row=w["slots_per_row"], slot_width_m=w["slot_width_m"],
        slot_depth_m=w["slot_depth_m"], slot_pitch_m=w["slot_pitch_m"],
        row_margin_m=w["row_margin_m"], occupancy=w["occupancy"],
        parked_length_m=w["parked_length_m"],
        parked_width_m=w["parked_width_m"],
        parked_jitter_m=w["parked_jitter_m"],
        parked_jitter_rad=w["parked_jitter_rad"],
        start_dist_min_m=(e["easy_start_min_m"] if easy
                          else w["start_dist_min_m"]),
        start_dist_max_m=(e["easy_start_max_m"] if easy
                          else w["start_dist_max_m"]),
        start_lateral_margin_m=w["start_lateral_margin_m"])


def build_bev_spec(cfg: dict) -> BevSpec:
    w = cfg["world"]
    return BevSpec(size=w["bev_size"],
                   resolution_m_per_cell=w["bev_resolution_m"])


def build_vocab(cfg: dict) -> TokenVocabulary:
    t = cfg["tokenizer"]
    return TokenVocabulary(
        steering=BinSpec(-1.0, 1.0, t["steering_bins"]),
        throttle=BinSpec(0.0, 1.0, t["throttle_bins"]),
        brake=BinSpec(0.0, 1.0, t["brake_bins"]),
        waypoint_xy=BinSpec(-t["waypoint_xy_range_m"],
                            t["waypoint_xy_range_m"], t["waypoint_bins"]),
        waypoint_heading_deg=BinSpec(-t["waypoint_heading_range_deg"],
                                     t["waypoint_heading_range_deg"],
                                     t["waypoint_bins"]))


def build_planner_params(cfg: dict) -> PlannerParams:
    p = cfg["planner"]
    return PlannerParams(
        arc_length_m=p["arc_length_m"], substep_m=p["substep_m"],
        xy_bucket_m=p["xy_bucket_m"],
        heading_bucket_rad=math.radians(p["heading_bucket_deg"]),
        reverse_penalty_per_m=p["reverse_penalty_per_m"],
        direction_switch_penalty=p["direction_switch_penalty"],
        steer_penalty_per_m=p["steer_penalty_per_m"],
        goal_xy_tol_m=p["goal_xy_tol_m"],
        goal_heading_tol_rad=math.radians(p["goal_heading_tol_deg"]),
        node_budget=p["node_budget"])


def build_pipeline(cfg: dict, use_gt_map: bool = True,
                   bev_noise: float | None = None) -> PipelineConfig:
    p = cfg["planner"]
    return PipelineConfig(
        replan_every=p["replan_every"], use_gt_map=use_gt_map,
        bev_noise=cfg["eval"]["bev_noise"] if bev_noise is None else bev_noise,
        bev_spec=build_bev_spec(cfg),
        planner=build_planner_params(cfg),
        gains=PidGains(k_p=p["k_p"], k_i=p["k_i"], k_d=p["k_d"],
                       k_p_v=p["k_p_v"], k_d_v=p["k_d_v"],
                       lookahead_m=p["lookahead_m"],
                       steer_slew_per_step=p["steer_slew_per_step"]),
        profile=SpeedProfile(cruise_mps=p["cruise_mps"],
                             approach_mps=p["approach_mps"],
                             decel_mps2=p["decel_mps2"],
                             stop_within_m=p["stop_within_m"]),
        map_resolution=p["map_resolution"],
        inflation_margin_m=p["inflation_margin_m"],
        commit_radius_m=p["commit_radius_m"],
        dock_length_m=p["dock_length_m"],
        plan_steer_fraction=p["plan_steer_fraction"])


def build_train_config(cfg: dict, seed: int = 0, **flags) -> TrainConfig:
    t = cfg["train"]
    merged = {
        "goal_tokens": t["goal_tokens"],
        "waypoints": t["waypoints"],
        "grad_attention": t["grad_attention"],
        **flags,
    }
    return TrainConfig(
        lr=t["lr"], batch_size=t["batch_size"], epochs=t["epochs"],
        seed=seed, val_fraction=t["val_fraction"],
        use_goal_tokens=merged["goal_tokens"],
        use_waypoints=merged["waypoints"],
        use_grad_attention=merged["grad_attention"],
        attn_stop_grad=cfg["network"]["attn_stop_grad"],
        caa_from_predicted=t["caa_from_predicted"],
        loss_weights={"control": t["w_control"], "waypoint": t["w_waypoint"],
                      "seg": t["w_seg"], "attn": t["w_attn"]},
        divergence_factor=t["divergence_factor"])


def build_policy_config(cfg: dict, train_cfg: TrainConfig) -> PolicyConfig:
    n = cfg["network"]
    return PolicyConfig(
        grid_size=cfg["world"]["bev_size"],
        conv_channels=tuple(n["conv_channels"]),
        d_bev=n["d_bev"], d_ego=n["d_ego"], d_goal=n["d_goal"],
        bev_feat_channels=n["bev_feat_channels"],
        bev_feat_size=n["bev_feat_size"], attn_hidden=n["attn_hidden"],
        embed_dim=n["embed_dim"], decoder_hidden=n["decoder_hidden"],
        waypoint_hidden=n["waypoint_hidden"],
        seg_channels=tuple(n["seg_channels"]),
        use_goal_tokens=train_cfg.use_goal_tokens,
        use_waypoints=train_cfg.use_waypoints,
        use_grad_attention=train_cfg.use_grad_attention,
        attn_stop_grad=n["attn_stop_grad"])


def build_thresholds(cfg: dict) -> OutcomeThresholds:
    e = cfg["eval"]
    return OutcomeThresholds(
        lateral_m=e["lateral_tol_m"], longitudinal_m=e["longitudinal_tol_m"],
        heading_rad=math.radians(e["heading_tol_deg"]),
        rest_speed_mps=e["rest_speed_mps"], rest_hold_s=e["rest_hold_s"])


def build_episode_config(cfg: dict) -> EpisodeConfig:
    return EpisodeConfig(time_limit_s=cfg["eval"]["time_limit_s"],
                         thresholds=build_thresholds(cfg))
