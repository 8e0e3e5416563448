"""Episode-policy adapters: learned network, modular pipeline, scripted."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from ..motion import MotionPredictor, PoseEstimator
from ..planner.pipeline import ModularPipelinePolicy, PipelineConfig
from ..policy import MalformedRollout, ParkingPolicyNet, one_hot_bev
from ..sim.bev import BevSpec, render_bev
from ..sim.episode import Observation
from ..sim.vehicle import ControlCommand, VehicleParams, VehicleState
from ..tokens import goal_in_ego_frame


@dataclass(frozen=True)
class EvalNoise:
    """Observation perturbations for the robustness study.

    Speed noise is multiplicative zero-mean Gaussian applied per control
    tick to the observed speed; target noise is a per-episode additive
    Gaussian offset on the goal position. Both leave the true dynamics
    untouched (config-switchable is out of scope for the sweep itself).
    """
    speed_noise_pct: float = 0.0
    target_noise_m: float = 0.0


class NoiseModel:
    def __init__(self, noise: EvalNoise, seed: int):
        self.noise = noise
        self._rng = np.random.default_rng(seed)
        if noise.target_noise_m > 0.0:
            self.goal_offset = tuple(
                self._rng.normal(0.0, noise.target_noise_m, size=2))
        else:
            self.goal_offset = (0.0, 0.0)

    def observe(self, state: VehicleState, tick: int) -> VehicleState:
        if self.noise.speed_noise_pct <= 0.0:
            return state
        factor = 1.0 + self._rng.normal(0.0, self.noise.speed_noise_pct / 100.0)
        return replace(state, v_mps=state.v_mps * factor)


class LearnedParkingPolicy:
    """Closed-loop adapter around a trained policy network.

    Each 0.1 s tick: refresh the pose estimate (motion predictor unless
    disabled), re-project the goal into the estimated ego frame, render
    the BEV observation, roll the control decoder greedily, and execute
    the first predicted command (receding horizon). Malformed rollouts
    fall back to braking and are counted.
    """

    def __init__(self, net: ParkingPolicyNet, params: VehicleParams,
                 motion: MotionPredictor | None = None,
                 bev_spec: BevSpec | None = None,
                 bev_noise: float = 0.0,
                 noise: EvalNoise | None = None,
                 noise_seed: int = 0,
                 execute_all: bool = False):
        self.net = net
        self.params = params
        self.bev_spec = bev_spec or BevSpec()
        self.bev_noise = bev_noise
        self.noise_cfg = noise or EvalNoise()
        self.noise_seed = noise_seed
        self.execute_all = execute_all
        self.estimator = (PoseEstimator(motion, params)
                          if motion is not None else None)
        self.malformed_count = 0
        self._noise: NoiseModel | None = None
        self._last_cmd = ControlCommand(brake=1.0)
        self._queue: list[ControlCommand] = []

    def __call__(self, obs: Observation) -> ControlCommand:
        if obs.tick == 0:
            self._noise = NoiseModel(self.noise_cfg, self.noise_seed)
            self.malformed_count = 0
            self._last_cmd = ControlCommand(brake=1.0)
            self._queue = []
            if self.estimator is not None:
                self.estimator.reset(obs)

        observed = self._noise.observe(obs.state, obs.tick)
        if self.estimator is not None:
            ex, ey, epsi = self.estimator.estimate(obs, observed,
                                                   self._last_cmd)
        else:
            ex, ey, epsi = observed.x_m, observed.y_m, observed.psi_rad

        if self.execute_all and self._queue:
            cmd = self._queue.pop(0)
            self._last_cmd = cmd
            return cmd

        slot = obs.lot.target_slot
        goal_pose = (slot.x + self._noise.goal_offset[0],
                     slot.y + self._noise.goal_offset[1], slot.psi)
        gdx, gdy, gdpsi = goal_in_ego_frame(goal_pose, (ex, ey, epsi))
        goal_vec = np.array([[gdx, gdy, math.sin(gdpsi), math.cos(gdpsi)]],
                            dtype=np.float32)

        bev = render_bev(obs.state, obs.lot, self.bev_spec, self.bev_noise,
                         rng_seed=hash((obs.rng_seed, "eval", obs.tick))
                         & 0x7FFFFFFF,
                         params=self.params)
        bev_oh = one_hot_bev(bev.cells.reshape(1, -1), self.bev_spec.size)

        c, s = math.cos(observed.psi_rad), math.sin(observed.psi_rad)
        a_long = observed.a_mps2[0] * c + observed.a_mps2[1] * s
        a_lat = -observed.a_mps2[0] * s + observed.a_mps2[1] * c
        ego_vec = np.array([[observed.v_mps, a_long, a_lat, s, c]],
                           dtype=np.float32)

        try:
            seq, _ = self.net.greedy_rollout(bev_oh, ego_vec, goal_vec)
            commands = self.net.vocab.decode_control_sequence(seq)
        except MalformedRollout:
            self.malformed_count += 1
            cmd = ControlCommand(brake=1.0, gear=self._last_cmd.gear)
            self._last_cmd = cmd
            return cmd
        if self.execute_all:
            self._queue = list(commands[1:])
        cmd = commands[0]
        self._last_cmd = cmd
        return cmd


def make_modular_policy(params: VehicleParams,
                        config: PipelineConfig | None = None,
                        motion: MotionPredictor | None = None,
                        noise: EvalNoise | None = None,
                        noise_seed: int = 0) -> ModularPipelinePolicy:
    """Evaluation wiring of the baseline: BEV-derived maps, predicted pose."""
    cfg = config or PipelineConfig(use_gt_map=False)
    model = NoiseModel(noise or EvalNoise(), noise_seed)
    pose_source = (PoseEstimator(motion, params)
                   if motion is not None else None)
    return ModularPipelinePolicy(params, cfg, pose_source=pose_source,
                                 observe_state=model.observe,
                                 goal_offset=model.goal_offset)


def brake_policy(obs: Observation) -> ControlCommand:
    return ControlCommand(brake=1.0)


class ReplayPolicy:
    """Replays a recorded command stream (expert-replay oracle)."""

    def __init__(self, commands: list[ControlCommand]):
        self.commands = commands

    def __call__(self, obs: Observation) -> ControlCommand:
        if obs.tick < len(self.commands):
            return self.commands[obs.tick]
        return ControlCommand(brake=1.0)
