"""Closed-loop episode stepping, collision checks, and outcome labels."""
from __future__ import annotations

import json
import math
import resource
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

from ..geometry import axis_angle_diff, world_to_frame, rects_intersect
from .vehicle import ControlCommand, Gear, VehicleParams, VehicleState, step_bicycle
from .world import ParkingLot, Scenario

SIM_HZ = 30
SIM_DT = 1.0 / SIM_HZ
STEPS_PER_CONTROL = 3           # policy queried every 0.1 s
CONTROL_DT = STEPS_PER_CONTROL * SIM_DT


class Outcome(Enum):
    TARGET_SUCCESS = "target_success"
    TARGET_FAILURE = "target_failure"
    NON_TARGET_SUCCESS = "non_target_success"
    COLLISION = "collision"
    TIMEOUT = "timeout"
    OUT_OF_BOUNDS = "out_of_bounds"
    ERROR = "error"             # policy raised; excluded from metric denominators


@dataclass(frozen=True)
class OutcomeThresholds:
    lateral_m: float = 0.6
    longitudinal_m: float = 1.0
    heading_rad: float = math.radians(10.0)
    rest_speed_mps: float = 0.05
    rest_hold_s: float = 1.0


@dataclass(frozen=True)
class TrajectoryPoint:
    t: float
    state: VehicleState
    cmd: ControlCommand


@dataclass
class EpisodeResult:
    outcome: Outcome
    final_state: VehicleState
    trajectory: list[TrajectoryPoint]
    wall_time_s: float = 0.0
    peak_mem_bytes: int = 0
    error_message: str = ""


def check_collision(state: VehicleState, lot: ParkingLot,
                    params: VehicleParams) -> bool:
    """True iff the body rectangle touches any obstacle or leaves lot bounds.

    Rectangles are closed, so a shared boundary point already counts.
    """
    body = state.body_rect(params)
    xmin, ymin, xmax, ymax = lot.bounds
    bx0, by0, bx1, by1 = body.aabb()
    if bx0 < xmin or by0 < ymin or bx1 > xmax or by1 > ymax:
        return True
    return any(rects_intersect(body, ob) for ob in lot.obstacles)


def _hits_obstacle(state: VehicleState, lot: ParkingLot,
                   params: VehicleParams) -> bool:
    body = state.body_rect(params)
    return any(rects_intersect(body, ob) for ob in lot.obstacles)


def pose_errors_vs_slot(state: VehicleState, slot, params: VehicleParams
                        ) -> tuple[float, float, float]:
    """(longitudinal, lateral, heading) error of the body center vs the slot.

    Longitudinal is along the slot axis; heading error is measured modulo
    pi, so backing in scores the same as nosing in.
    """
    cx, cy = state.body_center(params)
    lon, lat = world_to_frame(cx, cy, slot.x, slot.y, slot.psi)
    return abs(lon), abs(lat), axis_angle_diff(state.psi_rad, slot.psi)


def _within_thresholds(state: VehicleState, slot, params: VehicleParams,
                       th: OutcomeThresholds) -> bool:
    lon, lat, hdg = pose_errors_vs_slot(state, slot, params)
    return lat < th.lateral_m and lon < th.longitudinal_m and hdg < th.heading_rad


def classify_outcome(trajectory: list[TrajectoryPoint], lot: ParkingLot,
                     params: VehicleParams,
                     thresholds: OutcomeThresholds | None = None,
                     time_limit_s: float = 40.0) -> Outcome:
    """Label a completed trajectory.

    Collision (against obstacles) and out-of-bounds (ego rear-axle center
    leaving the lot) are checked step by step; a rest hold inside a slot
    classifies against that slot's pose; otherwise the episode times out.
    """
    if not trajectory:
        raise ValueError("trajectory is empty")
    th = thresholds or OutcomeThresholds()
    prev_t = -math.inf
    rest_since: Optional[float] = None
    for pt in trajectory:
        if pt.t <= prev_t:
            raise ValueError("trajectory timestamps must be strictly increasing")
        prev_t = pt.t
        if _hits_obstacle(pt.state, lot, params):
            return Outcome.COLLISION
        if not lot.contains_point(*pt.state.body_center(params)):
            return Outcome.OUT_OF_BOUNDS
        if abs(pt.state.v_mps) < th.rest_speed_mps:
            if rest_since is None:
                rest_since = pt.t
            if pt.t - rest_since >= th.rest_hold_s:
                cx, cy = pt.state.body_center(params)
                slot_idx = lot.slot_of_point(cx, cy)
                if slot_idx is not None:
                    slot = lot.slots[slot_idx]
                    if slot_idx == lot.target_slot_index:
                        return (Outcome.TARGET_SUCCESS
                                if _within_thresholds(pt.state, slot, params, th)
                                else Outcome.TARGET_FAILURE)
                    if _within_thresholds(pt.state, slot, params, th):
                        return Outcome.NON_TARGET_SUCCESS
                rest_since = pt.t  # parked nowhere useful: keep waiting
        else:
            rest_since = None
        if pt.t >= time_limit_s:
            return Outcome.TIMEOUT
    return Outcome.TIMEOUT


@dataclass(frozen=True)
class EpisodeConfig:
    time_limit_s: float = 40.0
    thresholds: OutcomeThresholds = field(default_factory=OutcomeThresholds)


class Observation:
    """What a policy sees at each control tick."""

    __slots__ = ("t", "state", "lot", "params", "rng_seed", "tick")

    def __init__(self, t: float, state: VehicleState, lot: ParkingLot,
                 params: VehicleParams, rng_seed: int, tick: int):
        self.t = t
        self.state = state
        self.lot = lot
        self.params = params
        self.rng_seed = rng_seed
        self.tick = tick


PolicyFn = Callable[[Observation], ControlCommand]


def run_episode(policy: PolicyFn, scenario: Scenario, params: VehicleParams,
                config: EpisodeConfig | None = None) -> EpisodeResult:
    """Integrate at 30 Hz, querying the policy every 3 steps (0.1 s).

    The returned command is held between queries. Terminal conditions
    mirror classify_outcome and are evaluated after each sim step. A
    policy exception yields Outcome.ERROR.
    """
    cfg = config or EpisodeConfig()
    th = cfg.thresholds
    lot = scenario.lot
    t0_wall = time.perf_counter()

    state = scenario.start
    cmd = ControlCommand()
    trajectory: list[TrajectoryPoint] = []
    outcome: Optional[Outcome] = None
    err_msg = ""
    rest_since: Optional[float] = None
    max_steps = int(round(cfg.time_limit_s * SIM_HZ)) + SIM_HZ  # slack past limit

    # Initial-state terminal checks (t = 0).
    if _hits_obstacle(state, lot, params):
        outcome = Outcome.COLLISION
    elif not lot.contains_point(*state.body_center(params)):
        outcome = Outcome.OUT_OF_BOUNDS

    k = 0
    while outcome is None and k < max_steps:
        if k % STEPS_PER_CONTROL == 0:
            obs = Observation(k * SIM_DT, state, lot, params,
                              scenario.seed, k // STEPS_PER_CONTROL)
            try:
                cmd = policy(obs).clamped()
            except Exception as exc:  # noqa: BLE001 - distinguished Error outcome
                outcome = Outcome.ERROR
                err_msg = f"{type(exc).__name__}: {exc}"
                break
        trajectory.append(TrajectoryPoint(k * SIM_DT, state, cmd))
        state = step_bicycle(state, cmd, params, SIM_DT)
        k += 1
        t = k / SIM_HZ

        if _hits_obstacle(state, lot, params):
            outcome = Outcome.COLLISION
        elif not lot.contains_point(*state.body_center(params)):
            outcome = Outcome.OUT_OF_BOUNDS
        elif abs(state.v_mps) < th.rest_speed_mps:
            if rest_since is None:
                rest_since = t
            if t - rest_since >= th.rest_hold_s:
                cx, cy = state.body_center(params)
                slot_idx = lot.slot_of_point(cx, cy)
                if slot_idx is not None:
                    slot = lot.slots[slot_idx]
                    if slot_idx == lot.target_slot_index:
                        outcome = (Outcome.TARGET_SUCCESS
                                   if _within_thresholds(state, slot, params, th)
                                   else Outcome.TARGET_FAILURE)
                    elif _within_thresholds(state, slot, params, th):
                        outcome = Outcome.NON_TARGET_SUCCESS
                if outcome is None:
                    rest_since = t
        else:
            rest_since = None
        if outcome is None and t >= cfg.time_limit_s:
            outcome = Outcome.TIMEOUT

    if outcome is None:
        outcome = Outcome.TIMEOUT
    trajectory.append(TrajectoryPoint(k / SIM_HZ, state, cmd))

    return EpisodeResult(
        outcome=outcome,
        final_state=state,
        trajectory=trajectory,
        wall_time_s=time.perf_counter() - t0_wall,
        peak_mem_bytes=resource.getrusage(resource.RUSAGE_SELF).ru_maxrss * 1024,
        error_message=err_msg,
    )


def episode_to_jsonl(result: EpisodeResult) -> str:
    """One object per control step plus a trailing summary object."""
    lines = []
    for pt in result.trajectory[::STEPS_PER_CONTROL]:
        lines.append(json.dumps({
            "t": round(pt.t, 6),
            "x": pt.state.x_m, "y": pt.state.y_m, "psi": pt.state.psi_rad,
            "v": pt.state.v_mps,
            "steering": pt.cmd.steering, "throttle": pt.cmd.throttle,
            "brake": pt.cmd.brake, "gear": pt.cmd.gear.value,
        }))
    lines.append(json.dumps({
        "outcome": result.outcome.value,
        "wall_time_s": result.wall_time_s,
        "peak_mem_bytes": result.peak_mem_bytes,
    }))
    return "\n".join(lines) + "\n"
