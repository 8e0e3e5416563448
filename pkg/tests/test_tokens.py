import math

import numpy as np
import pytest

from parklab.sim import ControlCommand, Gear
from parklab.tokens import (
    BinSpec,
    MalformedSequence,
    TokenVocabulary,
    WaypointSeq,
    discretize,
    global_to_waypoints,
    goal_in_ego_frame,
    undiscretize,
    waypoints_to_global,
)

WP = BinSpec(-6.0, 6.0, 200)


def test_boundary_bins():
    assert discretize(-6.0, WP) == 0
    assert discretize(6.0, WP) == 199
    assert discretize(0.0, WP) == 100          # 0 sits on bin 100's closed lower edge
    assert discretize(-100.0, WP) == 0         # clamped
    assert discretize(100.0, WP) == 199


def test_bin_centers():
    assert undiscretize(100, WP) == pytest.approx(0.03, abs=1e-12)
    assert undiscretize(0, WP) == pytest.approx(-5.97, abs=1e-12)
    with pytest.raises(IndexError):
        undiscretize(200, WP)
    with pytest.raises(IndexError):
        undiscretize(-1, WP)


def test_round_trip_error_below_half_width_exhaustive():
    half = WP.width / 2
    for v in np.arange(-6.0, 6.0 + 1e-9, 0.001):
        err = abs(v - undiscretize(discretize(float(v), WP), WP))
        assert err <= half + 1e-9


def test_discretize_monotone():
    rng = np.random.default_rng(7)
    vals = np.sort(rng.uniform(-8, 8, size=500))
    idxs = [discretize(float(v), WP) for v in vals]
    assert all(i <= j for i, j in zip(idxs, idxs[1:]))


def test_vocabulary_bijection():
    vocab = TokenVocabulary()
    seen = set()
    for tok in range(vocab.vocab_size):
        channel, bin_idx = vocab.channel_of(tok)
        if channel != "special":
            assert vocab.encode_channel(channel, bin_idx) == tok
        key = (channel, bin_idx)
        assert key not in seen
        seen.add(key)


def test_control_sequence_layout_and_round_trip():
    vocab = TokenVocabulary()
    cmds = [ControlCommand(0.0, 0.0, 0.0, Gear.FORWARD)] * 4
    seq = vocab.encode_control_sequence(cmds)
    assert len(seq) == 18
    assert seq[0] == vocab.bos and seq[-1] == vocab.eos
    decoded = vocab.decode_control_sequence(seq)
    for c in decoded:
        assert abs(c.steering) <= vocab.steering.width / 2 + 1e-9
        assert c.throttle <= vocab.throttle.width  # bin-0 center
        assert c.gear is Gear.FORWARD

    rng = np.random.default_rng(11)
    cmds = [ControlCommand(float(rng.uniform(-1, 1)), float(rng.uniform(0, 1)),
                           float(rng.uniform(0, 1)),
                           Gear.REVERSE if rng.random() < 0.5 else Gear.FORWARD)
            for _ in range(4)]
    decoded = vocab.decode_control_sequence(vocab.encode_control_sequence(cmds))
    for orig, dec in zip(cmds, decoded):
        assert abs(orig.steering - dec.steering) <= vocab.steering.width / 2 + 1e-9
        assert abs(orig.throttle - dec.throttle) <= vocab.throttle.width / 2 + 1e-9
        assert abs(orig.brake - dec.brake) <= vocab.brake.width / 2 + 1e-9
        assert orig.gear is dec.gear


def test_wrong_channel_token_rejected():
    vocab = TokenVocabulary()
    seq = vocab.encode_control_sequence([ControlCommand()] * 4)
    seq[1] = vocab.encode_channel("throttle", 0)  # throttle token in steering slot
    with pytest.raises(MalformedSequence):
        vocab.decode_control_sequence(seq)


def test_waypoint_tokens_round_trip():
    vocab = TokenVocabulary()
    wp = WaypointSeq(deltas=((0.5, -0.2, 3.0), (1.0, -0.4, 6.0),
                             (1.5, -0.5, 9.0), (2.0, -0.5, 12.0)))
    back = vocab.decode_waypoints(vocab.encode_waypoints(wp))
    for orig, dec in zip(wp.deltas, back.deltas):
        assert abs(orig[0] - dec[0]) <= 0.03 + 1e-9
        assert abs(orig[1] - dec[1]) <= 0.03 + 1e-9
        assert abs(orig[2] - dec[2]) <= 0.2 + 1e-9   # 80/400 deg half-width


def test_waypoints_to_global_identity_and_rotation():
    wp = WaypointSeq(deltas=((1.0, 0.0, 0.0),) * 4)
    out = waypoints_to_global(wp, (0.0, 0.0, 0.0))
    assert out[0] == pytest.approx((1.0, 0.0, 0.0))

    out = waypoints_to_global(wp, (0.0, 0.0, math.pi / 2))
    assert out[0][0] == pytest.approx(0.0, abs=1e-12)
    assert out[0][1] == pytest.approx(1.0, abs=1e-12)


def test_transform_composition_recovers_input():
    rng = np.random.default_rng(3)
    for _ in range(50):
        wp = WaypointSeq(deltas=tuple(
            (float(rng.uniform(-6, 6)), float(rng.uniform(-6, 6)),
             float(rng.uniform(-40, 40))) for _ in range(4)))
        pose = (float(rng.uniform(-10, 10)), float(rng.uniform(-10, 10)),
                float(rng.uniform(-math.pi, math.pi)))
        back = global_to_waypoints(waypoints_to_global(wp, pose), pose)
        for orig, dec in zip(wp.deltas, back.deltas):
            assert orig[0] == pytest.approx(dec[0], abs=1e-9)
            assert orig[1] == pytest.approx(dec[1], abs=1e-9)
            assert orig[2] == pytest.approx(dec[2], abs=1e-9)


def test_goal_in_ego_frame():
    dx, dy, dpsi = goal_in_ego_frame((1.0, 1.0, math.pi / 2), (1.0, 0.0, math.pi / 2))
    assert dx == pytest.approx(1.0, abs=1e-12)
    assert dy == pytest.approx(0.0, abs=1e-12)
    assert dpsi == pytest.approx(0.0, abs=1e-12)


def test_vocab_hash_stable_and_shape_sensitive():
    a, b = TokenVocabulary(), TokenVocabulary()
    assert a.content_hash() == b.content_hash()
    c = TokenVocabulary(steering=BinSpec(-1.0, 1.0, 64))
    assert a.content_hash() != c.content_hash()
