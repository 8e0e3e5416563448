"""Kinematic bicycle vehicle: parameters, state, commands, one-step integration.

State position (x_m, y_m) is the rear-axle center. The body rectangle is
centered midway between the axles (symmetric overhangs), which is what
collision checks and slot-alignment tests use.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

from ..geometry import OrientedRect, normalize_angle


class Gear(Enum):
    FORWARD = "forward"
    REVERSE = "reverse"

    @property
    def sign(self) -> float:
        return 1.0 if self is Gear.FORWARD else -1.0


@dataclass(frozen=True)
class VehicleParams:
    wheelbase_m: float = 2.8
    body_length_m: float = 4.4
    body_width_m: float = 1.9
    max_steer_rad: float = 0.6
    max_speed_mps: float = 3.0
    max_accel_mps2: float = 2.0
    max_brake_mps2: float = 4.0

    def __post_init__(self):
        for name in ("wheelbase_m", "body_length_m", "body_width_m",
                     "max_steer_rad", "max_speed_mps", "max_accel_mps2",
                     "max_brake_mps2"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")
        if self.max_steer_rad >= math.pi / 2:
            raise ValueError("max_steer_rad must be below pi/2")

    @property
    def min_turn_radius_m(self) -> float:
        return self.wheelbase_m / math.tan(self.max_steer_rad)


@dataclass(frozen=True)
class VehicleState:
    x_m: float
    y_m: float
    psi_rad: float
    v_mps: float = 0.0          # signed: negative while reversing
    a_mps2: tuple[float, float] = (0.0, 0.0)  # realized accel, world frame

    def body_rect(self, params: VehicleParams) -> OrientedRect:
        cx = self.x_m + 0.5 * params.wheelbase_m * math.cos(self.psi_rad)
        cy = self.y_m + 0.5 * params.wheelbase_m * math.sin(self.psi_rad)
        return OrientedRect(cx, cy, self.psi_rad,
                            params.body_length_m, params.body_width_m)

    def body_center(self, params: VehicleParams) -> tuple[float, float]:
        r = self.body_rect(params)
        return r.cx, r.cy


@dataclass(frozen=True)
class ControlCommand:
    steering: float = 0.0   # [-1, 1], positive turns left
    throttle: float = 0.0   # [0, 1]
    brake: float = 0.0      # [0, 1]
    gear: Gear = Gear.FORWARD

    def clamped(self) -> "ControlCommand":
        return replace(
            self,
            steering=min(1.0, max(-1.0, self.steering)),
            throttle=min(1.0, max(0.0, self.throttle)),
            brake=min(1.0, max(0.0, self.brake)),
        )


def step_bicycle(state: VehicleState, cmd: ControlCommand,
                 params: VehicleParams, dt: float) -> VehicleState:
    """Advance one explicit-Euler step of the kinematic bicycle.

    Position and heading integrate with the pre-step speed; speed then
    updates from throttle/brake. Braking saturates at zero speed and never
    flips the sign of v on its own.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    cmd = cmd.clamped()

    v = state.v_mps
    steer = cmd.steering * params.max_steer_rad
    cos_psi, sin_psi = math.cos(state.psi_rad), math.sin(state.psi_rad)

    x = state.x_m + v * cos_psi * dt
    y = state.y_m + v * sin_psi * dt
    psi = normalize_angle(
        state.psi_rad + (v / params.wheelbase_m) * math.tan(steer) * dt)

    # Brake first (saturating at rest), then drive.
    v_braked = v - math.copysign(1.0, v) * cmd.brake * params.max_brake_mps2 * dt
    if v == 0.0 or v_braked * v < 0.0:
        v_braked = 0.0
    v_new = v_braked + cmd.gear.sign * cmd.throttle * params.max_accel_mps2 * dt
    v_new = min(params.max_speed_mps, max(-params.max_speed_mps, v_new))

    a_long = (v_new - v) / dt
    return VehicleState(
        x_m=x, y_m=y, psi_rad=psi, v_mps=v_new,
        a_mps2=(a_long * cos_psi, a_long * sin_psi),
    )
