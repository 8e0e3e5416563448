"""PID path tracking on the kinematic bicycle.

Steering = curvature feedforward from the reference path plus a PID on
the lateral offset of a lookahead point expressed in the travel frame
(the ego frame rotated by pi when reversing), so cross-track and heading
deviations both contribute. Positive lateral error means the target lies
to the travel-left, which maps to positive (left) steering when moving
forward and the opposite sign in reverse.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..geometry import normalize_angle
from ..sim.episode import CONTROL_DT
from ..sim.vehicle import ControlCommand, Gear, VehicleParams, VehicleState
from .hybrid_astar import Direction, PlannedPath


@dataclass(frozen=True)
class PidGains:
    k_p: float = 1.2
    k_i: float = 0.05
    k_d: float = 1.8
    k_p_v: float = 3.0
    k_d_v: float = 0.0
    lookahead_m: float = 1.2
    steer_slew_per_step: float = 0.15   # max steering change per control step

    def __post_init__(self):
        for name in ("k_p", "k_i", "k_d", "k_p_v", "k_d_v", "lookahead_m",
                     "steer_slew_per_step"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass(frozen=True)
class SpeedProfile:
    cruise_mps: float = 2.0
    approach_mps: float = 0.5    # floor near cusps and the goal
    decel_mps2: float = 0.8
    stop_within_m: float = 0.25


class PathTracker:
    """Stateful tracker: one PID per segment between direction cusps."""

    def __init__(self, path: PlannedPath, gains: PidGains,
                 params: VehicleParams, profile: SpeedProfile | None = None,
                 initial_steer: float = 0.0):
        if len(path) == 0:
            raise ValueError("path is empty")
        self.path = path
        self.gains = gains
        self.params = params
        self.profile = profile or SpeedProfile()
        self.xy = np.array([[p[0], p[1]] for p in path.poses])
        self.arcs = path.arclengths()
        # Signed curvature per pose pair (in pose order), for feedforward,
        # clipped to what the steering can realize (the goal-snap pose pair
        # would otherwise alias into a huge spurious curvature).
        psis = np.array([p[2] for p in path.poses])
        if len(psis) > 1:
            dpsi = (np.diff(psis) + math.pi) % (2 * math.pi) - math.pi
            ds = np.maximum(np.diff(self.arcs), 1e-9)
            kappa_max = math.tan(params.max_steer_rad) / params.wheelbase_m
            self.kappa = np.append(
                np.clip(dpsi / ds, -kappa_max, kappa_max), 0.0)
        else:
            self.kappa = np.zeros(1)
        # A pose's direction labels the motion arriving at it, so a cusp at
        # index c means the vehicle stops at pose c-1 and departs toward c.
        n_last = len(path.poses) - 1
        bounds = [0] + [c - 1 for c in path.cusp_indices()] + [n_last]
        bounds = [b for i, b in enumerate(bounds)
                  if i == 0 or b > bounds[i - 1]]
        if len(bounds) < 2:
            bounds = [0, n_last]
        self.segments = [(bounds[i], bounds[i + 1])
                         for i in range(len(bounds) - 1)]
        self.seg_idx = 0
        self._integral = 0.0
        self._prev_err: float | None = None
        self._prev_verr: float | None = None
        self._prev_steer = initial_steer
        self.finished = False

    def _segment_direction(self, seg) -> Direction:
        i0, i1 = seg
        return self.path.poses[min(i0 + 1, i1)][3]

    def step(self, state: VehicleState) -> ControlCommand:
        if self.finished or len(self.path.poses) < 2:
            return self._limit(ControlCommand(brake=1.0))

        i0, i1 = self.segments[self.seg_idx]
        seg_xy = self.xy[i0:i1 + 1]
        d = np.hypot(seg_xy[:, 0] - state.x_m, seg_xy[:, 1] - state.y_m)
        nearest = i0 + int(np.argmin(d))

        direction = self._segment_direction((i0, i1))
        dir_sign = 1.0 if direction is Direction.FORWARD else -1.0
        travel_psi = state.psi_rad if dir_sign > 0 else state.psi_rad + math.pi

        # End-of-segment: true distance to the endpoint, with an overshoot
        # guard (endpoint already behind the travel direction and close).
        ex, ey = self.xy[i1]
        d_end = math.hypot(ex - state.x_m, ey - state.y_m)
        ahead = ((ex - state.x_m) * math.cos(travel_psi)
                 + (ey - state.y_m) * math.sin(travel_psi))
        near_end = (d_end < self.profile.stop_within_m
                    or (d_end < 0.8 and ahead < 0.0))

        if near_end:
            if self.seg_idx + 1 < len(self.segments):
                if abs(state.v_mps) < 0.3:    # wait for near-rest before a cusp
                    self.seg_idx += 1
                    self._integral = 0.0
                    self._prev_err = None
                    self._prev_verr = None
                return self._limit(ControlCommand(
                    brake=1.0, gear=self._gear(self.segments[self.seg_idx])))
            self.finished = True
            return self._limit(ControlCommand(brake=1.0))

        # Lookahead target along the segment; past the segment end, extend
        # virtually along the end heading so heading converges through the
        # stop point instead of stalling in the last lookahead.
        target_arc = self.arcs[nearest] + self.gains.lookahead_m
        j = nearest
        while j < i1 and self.arcs[j] < target_arc:
            j += 1
        tx, ty, tpsi, _ = self.path.poses[j]
        overrun = target_arc - self.arcs[i1]
        if j == i1 and overrun > 0.0:
            tr = tpsi if dir_sign > 0 else tpsi + math.pi
            tx += overrun * math.cos(tr)
            ty += overrun * math.sin(tr)

        # Lateral error in the travel frame.
        c, s = math.cos(travel_psi), math.sin(travel_psi)
        dx, dy = tx - state.x_m, ty - state.y_m
        e_lat = -dx * s + dy * c

        self._integral += e_lat * CONTROL_DT
        de = 0.0 if self._prev_err is None else (e_lat - self._prev_err) / CONTROL_DT
        self._prev_err = e_lat
        u = (self.gains.k_p * e_lat + self.gains.k_i * self._integral
             + self.gains.k_d * de)

        # Feedforward: steering that realizes the reference curvature.
        k_idx = min(j, max(i1 - 1, i0))
        steer_ff = dir_sign * math.atan(
            self.params.wheelbase_m * float(self.kappa[k_idx]))
        steering = max(-1.0, min(1.0, (steer_ff / self.params.max_steer_rad)
                                 + dir_sign * u))

        # Reference speed: trapezoidal, slowing toward segment ends.
        prof = self.profile
        dist_to_end = max(self.arcs[i1] - self.arcs[nearest], d_end)
        v_ramp = math.sqrt(max(0.0, 2.0 * prof.decel_mps2
                               * max(0.0, dist_to_end - prof.stop_within_m)))
        v_ref = min(prof.cruise_mps, max(prof.approach_mps, v_ramp))

        v_along = state.v_mps * dir_sign     # negative if moving against segment
        v_err = v_ref - v_along
        dv = 0.0 if self._prev_verr is None else (v_err - self._prev_verr) / CONTROL_DT
        self._prev_verr = v_err
        a_dem = self.gains.k_p_v * v_err + self.gains.k_d_v * dv

        throttle = brake = 0.0
        if a_dem > 0.0:
            throttle = min(1.0, a_dem / self.params.max_accel_mps2)
        else:
            brake = min(1.0, -a_dem / self.params.max_brake_mps2)
        gear = Gear.FORWARD if dir_sign > 0 else Gear.REVERSE
        return self._limit(ControlCommand(steering=steering, throttle=throttle,
                                          brake=brake, gear=gear))

    def _limit(self, cmd: ControlCommand) -> ControlCommand:
        """Slew-limit steering between control steps."""
        slew = self.gains.steer_slew_per_step
        lo, hi = self._prev_steer - slew, self._prev_steer + slew
        limited = max(lo, min(hi, cmd.steering))
        self._prev_steer = limited
        if limited == cmd.steering:
            return cmd
        return ControlCommand(steering=limited, throttle=cmd.throttle,
                              brake=cmd.brake, gear=cmd.gear)

    def _gear(self, seg) -> Gear:
        return (Gear.FORWARD
                if self._segment_direction(seg) is Direction.FORWARD
                else Gear.REVERSE)


def track_path_pid(path: PlannedPath, state: VehicleState, gains: PidGains,
                   params: VehicleParams) -> ControlCommand:
    """One-shot tracking command (fresh PID state; integral starts at zero)."""
    return PathTracker(path, gains, params).step(state)
