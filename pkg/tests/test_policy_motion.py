import math

import numpy as np
import pytest

from parklab import nn
from parklab.motion import (
    DisplacementPrediction,
    MotionConfig,
    MotionPredictor,
    PoseEstimator,
    nll,
    update_position,
)
from parklab.nn import Tape, Tensor
from parklab.policy import (
    ParkingPolicyNet,
    PolicyConfig,
    one_hot_bev,
    teacher_inputs,
)
from parklab.tokens import TokenVocabulary

VOCAB = TokenVocabulary()


def make_net(**kwargs):
    return ParkingPolicyNet(PolicyConfig(**kwargs), VOCAB, seed=1)


def random_batch(rng, n=2):
    bev = rng.integers(0, 3, size=(n, 96 * 96)).astype(np.uint8)
    ego = rng.standard_normal((n, 5)).astype(np.float32)
    goal = rng.standard_normal((n, 4)).astype(np.float32)
    tokens = np.stack([
        np.array(VOCAB.encode_control_sequence(
            [_random_cmd(rng) for _ in range(4)])[1:-1]) for _ in range(n)])
    return bev, ego, goal, tokens.astype(np.int64)


def _random_cmd(rng):
    from parklab.sim import ControlCommand, Gear
    return ControlCommand(float(rng.uniform(-1, 1)), float(rng.uniform(0, 1)),
                          float(rng.uniform(0, 1)),
                          Gear.REVERSE if rng.random() < 0.5 else Gear.FORWARD)


def test_forward_shapes():
    rng = np.random.default_rng(0)
    net = make_net()
    bev, ego, goal, tokens = random_batch(rng, n=2)
    tape = Tape()
    leaves = net.params.bind(tape)
    out = net.forward(leaves, one_hot_bev(bev, 96), ego, goal,
                      teacher_inputs(VOCAB, tokens))
    assert out.control_logits.shape == (2, 16, VOCAB.vocab_size)
    assert out.waypoint_logits.shape == (2, 4, 3, 200)
    assert out.seg_logits.shape == (2, 3, 96, 96)
    assert out.attention.shape == (2, 12, 12)
    assert out.fused.shape == (2, 192)
    assert out.bev_feature.shape == (2, 16, 12, 12)
    assert np.isfinite(out.control_logits.data).all()


def test_fused_concat_locality():
    # two inputs differing only in goal differ only in the last d_goal slots
    rng = np.random.default_rng(1)
    net = make_net()
    bev, ego, goal, _ = random_batch(rng, n=1)
    tape = Tape()
    leaves = net.params.bind(tape)
    f1, _ = net.encode_inputs(leaves, one_hot_bev(bev, 96), ego, goal)
    f2, _ = net.encode_inputs(leaves, one_hot_bev(bev, 96), ego, goal + 1.0)
    d = np.abs(f1.data - f2.data)[0]
    assert d[:160].max() == 0.0
    assert d[160:].max() > 0.0


def test_goal_branch_zero_init_gives_bias():
    net = make_net()
    net.params["enc.goal2.w"] = np.zeros_like(net.params["enc.goal2.w"])
    bias = np.arange(32, dtype=np.float32) / 32
    net.params["enc.goal2.b"] = bias
    rng = np.random.default_rng(2)
    bev, ego, goal, _ = random_batch(rng, n=1)
    tape = Tape()
    leaves = net.params.bind(tape)
    f, _ = net.encode_inputs(leaves, one_hot_bev(bev, 96), ego, goal * 5)
    assert np.allclose(f.data[0, 160:], bias)


def test_goal_tokens_disabled_zeroes_segment():
    rng = np.random.default_rng(3)
    net = make_net(use_goal_tokens=False)
    bev, ego, goal, _ = random_batch(rng, n=1)
    tape = Tape()
    leaves = net.params.bind(tape)
    f, _ = net.encode_inputs(leaves, one_hot_bev(bev, 96), ego, goal)
    assert np.all(f.data[0, 160:] == 0.0)


def test_attention_non_negative_and_deterministic():
    rng = np.random.default_rng(4)
    net = make_net()
    bev, ego, goal, tokens = random_batch(rng, n=3)
    tape = Tape()
    leaves = net.params.bind(tape)
    out1 = net.forward(leaves, one_hot_bev(bev, 96), ego, goal,
                       teacher_inputs(VOCAB, tokens))
    assert (out1.attention.data >= 0.0).all()
    tape2 = Tape()
    leaves2 = net.params.bind(tape2)
    out2 = net.forward(leaves2, one_hot_bev(bev, 96), ego, goal,
                       teacher_inputs(VOCAB, tokens))
    assert np.array_equal(out1.control_logits.data, out2.control_logits.data)


def test_attend_matches_loop_oracle():
    rng = np.random.default_rng(5)
    b = rng.standard_normal((2, 16, 12, 12)).astype(np.float32)
    a = rng.standard_normal((2, 12, 12)).astype(np.float32)
    out = ParkingPolicyNet.attend(Tensor(b), Tensor(a)).data
    ref = np.empty_like(b)
    for n in range(2):
        for c in range(16):
            for i in range(12):
                for j in range(12):
                    ref[n, c, i, j] = b[n, c, i, j] * a[n, i, j]
    assert np.abs(out - ref).max() <= 1e-7


def test_identity_attention_passthrough():
    rng = np.random.default_rng(6)
    b = rng.standard_normal((1, 16, 12, 12)).astype(np.float32)
    ones = np.ones((1, 12, 12), dtype=np.float32)
    assert np.array_equal(ParkingPolicyNet.attend(Tensor(b), Tensor(ones)).data, b)
    zeros = np.zeros((1, 12, 12), dtype=np.float32)
    assert np.all(ParkingPolicyNet.attend(Tensor(b), Tensor(zeros)).data == 0.0)


def test_decoder_causality():
    # logits at position k must not depend on ground-truth tokens at > k
    rng = np.random.default_rng(7)
    net = make_net()
    bev, ego, goal, tokens = random_batch(rng, n=1)
    tin = teacher_inputs(VOCAB, tokens)

    tape = Tape()
    leaves = net.params.bind(tape)
    out1 = net.forward(leaves, one_hot_bev(bev, 96), ego, goal, tin).control_logits.data

    tokens2 = tokens.copy()
    tokens2[0, 10:] = VOCAB.encode_channel("brake", 3)  # corrupt the tail
    tin2 = teacher_inputs(VOCAB, tokens2)
    tape2 = Tape()
    leaves2 = net.params.bind(tape2)
    out2 = net.forward(leaves2, one_hot_bev(bev, 96), ego, goal, tin2).control_logits.data
    # positions 0..10 see identical prefixes (input at k is token k-1)
    assert np.array_equal(out1[0, :11], out2[0, :11])
    assert not np.array_equal(out1[0, 11:], out2[0, 11:])


def test_rollout_structure():
    rng = np.random.default_rng(8)
    net = make_net()
    bev, ego, goal, _ = random_batch(rng, n=1)
    try:
        seq, attn = net.greedy_rollout(one_hot_bev(bev, 96), ego, goal)
    except Exception as exc:
        from parklab.policy import MalformedRollout
        assert isinstance(exc, MalformedRollout)
        return
    assert len(seq) == 18
    assert seq[0] == VOCAB.bos and seq[-1] == VOCAB.eos
    cmds = VOCAB.decode_control_sequence(seq)
    assert len(cmds) == 4
    assert attn.shape == (12, 12)


def test_retain_grad_on_bev_feature():
    rng = np.random.default_rng(9)
    net = make_net()
    bev, ego, goal, tokens = random_batch(rng, n=1)
    tape = Tape()
    leaves = net.params.bind(tape)
    out = net.forward(leaves, one_hot_bev(bev, 96), ego, goal,
                      teacher_inputs(VOCAB, tokens))
    assert out.bev_feature.retained
    loss = nn.tmean(out.control_logits)
    g = tape.backward(loss)
    grad = g.wrt_intermediate(out.bev_feature)
    assert grad.shape == (1, 16, 12, 12)
    assert np.isfinite(grad.data).all()


def test_gradients_reach_every_parameter_group():
    rng = np.random.default_rng(10)
    net = make_net()
    bev, ego, goal, tokens = random_batch(rng, n=2)
    tape = Tape()
    leaves = net.params.bind(tape)
    out = net.forward(leaves, one_hot_bev(bev, 96), ego, goal,
                      teacher_inputs(VOCAB, tokens))
    total = nn.add(
        nn.add(nn.tmean(nn.softmax_cross_entropy(
            out.control_logits, tokens)),
            nn.tmean(nn.mul(out.waypoint_logits, out.waypoint_logits))),
        nn.add(nn.tmean(nn.mul(out.seg_logits, out.seg_logits)),
               nn.tmean(out.attention)))
    g = tape.backward(total)
    for name, leaf in leaves.items():
        grad = g.wrt(leaf)
        assert np.abs(grad).max() > 0.0, f"zero gradient for {name}"


# ---------------------------------------------------------------------------
# motion predictor


def test_motion_shapes_and_clamp():
    model = MotionPredictor(seed=0)
    rng = np.random.default_rng(0)
    hist = rng.standard_normal((4, 9)).astype(np.float32) * 10
    pred = model.predict(hist)
    assert pred.mu.shape == (2,) and pred.sigma2.shape == (2,)
    assert (pred.sigma2 >= 1e-6).all() and (pred.sigma2 <= 1.0).all()


def test_nll_closed_form_perfect_mean_unit_variance():
    mu = Tensor(np.zeros((1, 2), dtype=np.float32))
    sigma2 = Tensor(np.ones((1, 2), dtype=np.float32))
    loss = nll(mu, sigma2, np.zeros((1, 2), dtype=np.float32))
    assert loss.data[0] == pytest.approx(math.log(2 * math.pi), rel=1e-5)


def test_nll_decreases_with_smaller_variance_at_perfect_mean():
    target = np.zeros((1, 2), dtype=np.float32)
    prev = None
    for s2 in (1.0, 0.5, 0.1, 0.01):
        loss = nll(Tensor(np.zeros((1, 2), dtype=np.float32)),
                   Tensor(np.full((1, 2), s2, dtype=np.float32)), target).data[0]
        if prev is not None:
            assert loss < prev
        prev = loss


def test_nll_gradient_wrt_mu_closed_form():
    rng = np.random.default_rng(3)
    mu0 = rng.standard_normal((4, 2)).astype(np.float32)
    s2 = np.abs(rng.standard_normal((4, 2))).astype(np.float32) * 0.5 + 0.1
    target = rng.standard_normal((4, 2)).astype(np.float32)
    tape = Tape()
    mu = tape.leaf(mu0)
    loss = nn.tsum(nll(mu, Tensor(s2), target))
    g = tape.backward(loss).wrt(mu)
    expected = (mu0 - target) / s2
    assert np.abs(g - expected).max() < 1e-5


def test_nll_translation_invariant():
    rng = np.random.default_rng(4)
    mu = rng.standard_normal((3, 2)).astype(np.float32)
    s2 = np.full((3, 2), 0.3, dtype=np.float32)
    t = rng.standard_normal((3, 2)).astype(np.float32)
    shift = np.float32(5.0)
    a = nll(Tensor(mu), Tensor(s2), t).data
    b = nll(Tensor(mu + shift), Tensor(s2), t + shift).data
    assert np.allclose(a, b, atol=1e-5)


def test_update_position():
    pred = DisplacementPrediction(mu=np.array([0.3, -0.1]),
                                  sigma2=np.array([0.1, 0.1]))
    assert update_position((1.0, 2.0), pred) == pytest.approx((1.3, 1.9))
    zero = DisplacementPrediction(mu=np.zeros(2), sigma2=np.ones(2) * 0.1)
    assert update_position((4.0, 5.0), zero) == (4.0, 5.0)


def test_cumulative_updates_sum():
    rng = np.random.default_rng(5)
    pos = (0.0, 0.0)
    mus = rng.standard_normal((20, 2)).astype(np.float32) * 0.1
    for m in mus:
        pos = update_position(pos, DisplacementPrediction(
            mu=m.astype(np.float64), sigma2=np.ones(2) * 0.1))
    assert pos[0] == pytest.approx(float(mus[:, 0].sum()), abs=1e-5)
    assert pos[1] == pytest.approx(float(mus[:, 1].sum()), abs=1e-5)


def test_single_frame_variant_runs():
    model = MotionPredictor(MotionConfig(single_frame=True), seed=0)
    rng = np.random.default_rng(1)
    pred = model.predict(rng.standard_normal((4, 9)).astype(np.float32))
    assert pred.mu.shape == (2,)


def test_checkpoint_round_trip(tmp_path):
    model = MotionPredictor(MotionConfig(single_frame=True), seed=3)
    path = tmp_path / "motion.caap"
    model.save(path)
    loaded = MotionPredictor.load(path)
    assert loaded.config.single_frame
    rng = np.random.default_rng(2)
    hist = rng.standard_normal((4, 9)).astype(np.float32)
    a, b = model.predict(hist), loaded.predict(hist)
    assert np.array_equal(a.mu, b.mu) and np.array_equal(a.sigma2, b.sigma2)
