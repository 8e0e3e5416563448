import math

import numpy as np
import pytest

from parklab.sim import ControlCommand, Gear, VehicleParams, VehicleState, step_bicycle


PARAMS = VehicleParams(wheelbase_m=2.5, max_steer_rad=0.6, max_speed_mps=5.0,
                       max_accel_mps2=2.0, max_brake_mps2=3.0)


def test_zero_steer_straight_line():
    s0 = VehicleState(1.0, 2.0, 0.7, v_mps=1.0)
    s1 = step_bicycle(s0, ControlCommand(), PARAMS, dt=0.1)
    assert s1.psi_rad == s0.psi_rad
    dist = math.hypot(s1.x_m - s0.x_m, s1.y_m - s0.y_m)
    assert dist == pytest.approx(0.1, abs=1e-12)
    assert s1.x_m - s0.x_m == pytest.approx(0.1 * math.cos(0.7), abs=1e-12)


def test_constant_steer_turning_radius_matches_circle_fit():
    # steering fraction chosen so steer * max_steer = 0.4 rad
    frac = 0.4 / PARAMS.max_steer_rad
    expected_r = PARAMS.wheelbase_m / math.tan(0.4)  # ~5.915 m

    state = VehicleState(0.0, 0.0, 0.0, v_mps=1.0)
    cmd = ControlCommand(steering=frac)
    pts = []
    for _ in range(1000):
        state = step_bicycle(state, cmd, PARAMS, dt=0.001)
        pts.append((state.x_m, state.y_m))
    pts = np.array(pts)

    # Algebraic circle fit (Kasa): minimizes |x^2+y^2 + D x + E y + F|
    x, y = pts[:, 0], pts[:, 1]
    A = np.column_stack([x, y, np.ones_like(x)])
    b = -(x**2 + y**2)
    (D, E, _F), *_ = np.linalg.lstsq(A, b, rcond=None)
    cx, cy = -D / 2, -E / 2
    radii = np.hypot(x - cx, y - cy)
    assert radii.mean() == pytest.approx(expected_r, rel=0.01)
    assert radii.std() < 0.01 * expected_r


def test_brake_saturates_at_rest_without_sign_flip():
    s0 = VehicleState(0.0, 0.0, 0.0, v_mps=0.05)
    s1 = step_bicycle(s0, ControlCommand(brake=1.0), PARAMS, dt=0.1)
    assert s1.v_mps == 0.0


def test_brake_only_never_reverses_from_forward():
    state = VehicleState(0.0, 0.0, 0.0, v_mps=2.0)
    for _ in range(100):
        state = step_bicycle(state, ControlCommand(brake=1.0), PARAMS, dt=0.1)
        assert state.v_mps >= 0.0
    assert state.v_mps == 0.0


def test_reverse_gear_drives_backward():
    s0 = VehicleState(0.0, 0.0, 0.0, v_mps=0.0)
    s1 = step_bicycle(s0, ControlCommand(throttle=1.0, gear=Gear.REVERSE),
                      PARAMS, dt=0.1)
    assert s1.v_mps < 0.0
    s2 = step_bicycle(s1, ControlCommand(gear=Gear.REVERSE), PARAMS, dt=0.1)
    assert s2.x_m < s1.x_m  # moving backward along +x heading


def test_heading_normalized_after_many_steps():
    state = VehicleState(0.0, 0.0, 3.0, v_mps=3.0)
    cmd = ControlCommand(steering=1.0, throttle=0.5)
    for _ in range(2000):
        state = step_bicycle(state, cmd, PARAMS, dt=0.05)
        assert -math.pi < state.psi_rad <= math.pi


def test_coasting_speed_non_increasing():
    state = VehicleState(0.0, 0.0, 0.0, v_mps=4.0)
    prev = state.v_mps
    for _ in range(50):
        state = step_bicycle(state, ControlCommand(brake=0.3), PARAMS, dt=0.1)
        assert abs(state.v_mps) <= abs(prev)
        prev = state.v_mps


def test_kinematic_time_reversal_zero_steer():
    s0 = VehicleState(3.0, -1.0, 0.9, v_mps=2.0)
    fwd = step_bicycle(s0, ControlCommand(), PARAMS, dt=0.1)
    back = step_bicycle(
        VehicleState(fwd.x_m, fwd.y_m, fwd.psi_rad, -fwd.v_mps),
        ControlCommand(gear=Gear.REVERSE), PARAMS, dt=0.1)
    assert back.x_m == pytest.approx(s0.x_m, abs=1e-9)
    assert back.y_m == pytest.approx(s0.y_m, abs=1e-9)


def test_speed_clamped_to_max():
    state = VehicleState(0.0, 0.0, 0.0, v_mps=0.0)
    for _ in range(200):
        state = step_bicycle(state, ControlCommand(throttle=1.0), PARAMS, dt=0.1)
    assert state.v_mps == PARAMS.max_speed_mps


def test_params_validation():
    with pytest.raises(ValueError):
        VehicleParams(wheelbase_m=-1.0)
    with pytest.raises(ValueError):
        VehicleParams(max_steer_rad=2.0)
