"""Closed-loop modular pipeline: perceive -> plan -> track, with replanning."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from ..geometry import normalize_angle, world_to_frame
from ..sim.bev import BevSpec, render_bev
from ..sim.episode import Observation
from ..sim.vehicle import ControlCommand, VehicleParams, VehicleState
from ..sim.world import Slot
from .grid_map import GridMap, _inflate, disc_cover_radius, grid_from_bev, grid_from_lot
from .hybrid_astar import (
    Direction,
    GoalInCollision,
    PlannedPath,
    PlannerParams,
    PlanningError,
    StartInCollision,
    plan_hybrid_astar,
)
from .pid import PathTracker, PidGains, SpeedProfile


def rear_axle_goal(slot: Slot, params: VehicleParams) -> tuple[float, float, float]:
    """Rear-axle pose that centers the body in the slot, nose-in."""
    return (slot.x - 0.5 * params.wheelbase_m * math.cos(slot.psi),
            slot.y - 0.5 * params.wheelbase_m * math.sin(slot.psi),
            slot.psi)


def _append_dock(path: PlannedPath, pre_goal, goal,
                 step: float = 0.1) -> PlannedPath:
    """Extend a path from the pre-goal with a straight nose-in run."""
    gx, gy, gpsi = goal
    length = math.hypot(gx - pre_goal[0], gy - pre_goal[1])
    n = max(1, int(round(length / step)))
    poses = list(path.poses)
    total = path.cumulative_length_m
    prev = poses[-1]
    for i in range(1, n + 1):
        t = i / n
        x = pre_goal[0] + t * (gx - pre_goal[0])
        y = pre_goal[1] + t * (gy - pre_goal[1])
        total += math.hypot(x - prev[0], y - prev[1])
        prev = (x, y)
        poses.append((x, y, gpsi, Direction.FORWARD))
    return PlannedPath(poses=poses, cumulative_length_m=total)


@dataclass
class PipelineConfig:
    replan_every: int = 30            # control steps between replans (3 s)
    use_gt_map: bool = True           # rasterize the true lot vs the BEV render
    bev_noise: float = 0.0
    bev_spec: BevSpec = field(default_factory=BevSpec)
    # Closed-loop planning budget is capped well below the planner default:
    # a replan fires every 3 s, so worst-case search must stay bounded.
    planner: PlannerParams = field(
        default_factory=lambda: PlannerParams(node_budget=30_000,
                                              steer_penalty_per_m=0.2))
    gains: PidGains = field(default_factory=PidGains)
    profile: SpeedProfile = field(default_factory=SpeedProfile)
    map_resolution: float = 0.25
    inflation_margin_m: float = 0.25  # tracking-error slack on top of the body cover
    commit_radius_m: float = 4.0      # stop replanning once this close to the goal
    dock_length_m: float = 2.5        # straight final run-in along the slot axis
    plan_steer_fraction: float = 0.85  # steering headroom left for feedback


class ModularPipelinePolicy:
    """Hybrid A* + PID as an episode policy.

    pose_source maps the observation to the pose used for planning and
    tracking (ground truth by default; a motion-prediction estimator in
    the evaluation wiring). observe_state optionally perturbs the
    observed kinematic state (speed noise); goal_offset shifts the goal
    (target noise).
    """

    def __init__(self, params: VehicleParams, config: PipelineConfig | None = None,
                 pose_source=None,
                 observe_state: Optional[Callable[[VehicleState, int], VehicleState]] = None,
                 goal_offset: tuple[float, float] = (0.0, 0.0)):
        self.params = params
        self.config = config or PipelineConfig()
        self.pose_source = pose_source
        self.observe_state = observe_state
        self.goal_offset = goal_offset
        self._path: PlannedPath | None = None
        self._tracker: PathTracker | None = None
        self._last_cmd = ControlCommand(brake=1.0)
        self.replan_count = 0
        self.plan_failures = 0

    def _reset(self):
        self._path = None
        self._tracker = None
        self._last_cmd = ControlCommand(brake=1.0)
        self.replan_count = 0
        self.plan_failures = 0

    def __call__(self, obs: Observation) -> ControlCommand:
        if obs.tick == 0:
            self._reset()
            if self.pose_source is not None:
                self.pose_source.reset(obs)

        observed = obs.state
        if self.observe_state is not None:
            observed = self.observe_state(observed, obs.tick)

        if self.pose_source is None:
            est_x, est_y, est_psi = observed.x_m, observed.y_m, observed.psi_rad
        else:
            est_x, est_y, est_psi = self.pose_source.estimate(
                obs, observed, self._last_cmd)
        est_state = VehicleState(est_x, est_y, est_psi, observed.v_mps,
                                 observed.a_mps2)

        gx, gy, _ = rear_axle_goal(obs.lot.target_slot, self.params)
        near_goal = (math.hypot(est_state.x_m - gx - self.goal_offset[0],
                                est_state.y_m - gy - self.goal_offset[1])
                     < self.config.commit_radius_m)
        due = self._path is None or obs.tick % self.config.replan_every == 0
        if due and not (near_goal and self._tracker is not None):
            self._replan(obs, est_state)

        if self._tracker is None:
            cmd = ControlCommand(brake=1.0)   # wait for the next replan
        else:
            cmd = self._tracker.step(est_state)
        self._last_cmd = cmd
        return cmd

    def _replan(self, obs: Observation, est_state: VehicleState) -> None:
        cfg = self.config
        lot = obs.lot
        inflation = disc_cover_radius(self.params) + cfg.inflation_margin_m
        if cfg.use_gt_map:
            grid = grid_from_lot(lot, self.params, cfg.map_resolution, inflation)
        else:
            bev = render_bev(obs.state, lot, cfg.bev_spec, cfg.bev_noise,
                             rng_seed=hash((obs.rng_seed, obs.tick)) & 0x7FFFFFFF,
                             params=self.params)
            grid = grid_from_bev(bev, est_state, lot.bounds, self.params,
                                 cfg.map_resolution, inflation)
        gx, gy, gpsi = rear_axle_goal(lot.target_slot, self.params)
        gx += self.goal_offset[0]
        gy += self.goal_offset[1]
        # Plan to a pre-goal short of the slot, then dock straight in, so
        # the reference ends with an alignment run instead of a curve.
        dock = cfg.dock_length_m
        pre_goal = (gx - dock * math.cos(gpsi), gy - dock * math.sin(gpsi), gpsi)
        start = (est_state.x_m, est_state.y_m, est_state.psi_rad)

        # Already inside the docking corridor and aligned: skip the search
        # and take the straight run-in directly (also covers start == goal).
        lon, lat = world_to_frame(start[0], start[1], gx, gy, gpsi)
        dpsi = abs(normalize_angle(start[2] - gpsi))
        if -dock - 0.5 <= lon <= 0.5 and abs(lat) < 0.5 and dpsi < 0.35:
            entry = (start[0], start[1], gpsi)
            self._path = _append_dock(
                PlannedPath(poses=[(start[0], start[1], start[2],
                                    Direction.FORWARD)],
                            cumulative_length_m=0.0),
                entry, (gx, gy, gpsi))
            self._tracker = PathTracker(self._path, cfg.gains, self.params,
                                        cfg.profile,
                                        initial_steer=self._last_cmd.steering)
            self.replan_count += 1
            return

        plan_params = replace(
            self.params,
            max_steer_rad=self.params.max_steer_rad * cfg.plan_steer_fraction)
        try:
            if grid.pose_blocked(*start, self.params):
                # Start sits inside the safety halo: clear halo cells only.
                grid = grid.with_start_clearance(*start, self.params)
            try:
                path = plan_hybrid_astar(start, pre_goal, grid,
                                         plan_params, cfg.planner)
            except GoalInCollision:
                # Margin made the goal look wedged; retry with the bare cover.
                grid = GridMap(grid.occupancy,
                               _inflate(grid.occupancy,
                                        disc_cover_radius(self.params),
                                        cfg.map_resolution),
                               cfg.map_resolution, grid.origin,
                               disc_cover_radius(self.params))
                path = plan_hybrid_astar(start, pre_goal, grid,
                                         plan_params, cfg.planner)
            self._path = _append_dock(path, pre_goal, (gx, gy, gpsi))
            self._tracker = PathTracker(self._path, cfg.gains, self.params,
                                        cfg.profile,
                                        initial_steer=self._last_cmd.steering)
            self.replan_count += 1
        except PlanningError:
            self.plan_failures += 1
            self._path = None
            self._tracker = None
