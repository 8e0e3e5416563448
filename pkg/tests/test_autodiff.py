import math

import numpy as np
import pytest

from parklab import nn
from parklab.nn import (
    F32,
    NotRetained,
    ShapeMismatch,
    Tape,
    Tensor,
)

from fd_utils import check_grad, fd_grad, relative_errors


def rand(rng, *shape):
    return rng.standard_normal(shape).astype(F32)


# ---------------------------------------------------------------------------
# forward semantics


def test_relu_forward():
    t = Tape()
    x = t.leaf(np.array([-1.0, 0.0, 2.0], dtype=F32))
    assert np.array_equal(nn.relu(x).data, [0.0, 0.0, 2.0])


def test_uniform_softmax_ce_is_log_v():
    t = Tape()
    for v in (3, 7, 200):
        logits = t.leaf(np.zeros(v, dtype=F32))
        loss = nn.softmax_cross_entropy(logits, np.array(0))
        assert loss.item() == pytest.approx(math.log(v), rel=1e-5)


def test_identity_kernel_conv():
    t = Tape()
    rng = np.random.default_rng(0)
    x = t.leaf(rand(rng, 1, 1, 5, 5))
    k = np.zeros((1, 1, 3, 3), dtype=F32)
    k[0, 0, 1, 1] = 1.0
    w = t.leaf(k)
    y = nn.conv2d(x, w, stride=1, pad=1)
    assert np.allclose(y.data, x.data, atol=1e-7)


def test_conv_matches_direct_summation():
    rng = np.random.default_rng(5)
    x = rand(rng, 2, 3, 7, 6)
    w = rand(rng, 4, 3, 3, 3)
    b = rand(rng, 4)
    t = Tape()
    out = nn.conv2d(t.leaf(x), t.leaf(w), t.leaf(b), stride=2, pad=1).data

    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ho, wo = out.shape[2:]
    ref = np.zeros_like(out)
    for n in range(2):
        for f in range(4):
            for i in range(ho):
                for j in range(wo):
                    patch = xp[n, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3]
                    ref[n, f, i, j] = (patch * w[f]).sum() + b[f]
    assert np.abs(out - ref).max() < 1e-5


def test_conv_transpose_is_adjoint_of_conv():
    # <conv(x), y> == <x, conv_T(y)> for unbiased maps with same stride/pad
    rng = np.random.default_rng(9)
    x = rand(rng, 2, 3, 8, 8)
    w = rand(rng, 5, 3, 4, 4)
    t = Tape()
    y = nn.conv2d(t.leaf(x), t.leaf(w), stride=2, pad=1)
    z = rand(rng, *y.shape)
    lhs = float((y.data * z).sum())
    zt = nn.conv2d_transpose(t.leaf(z), t.leaf(np.transpose(w, (0, 1, 2, 3))),
                             stride=2, pad=1)
    # conv2d weight (F, C, kh, kw) acts as conv_transpose weight (Cin=F, Cout=C)
    rhs = float((x * zt.data).sum())
    assert lhs == pytest.approx(rhs, rel=1e-4)


def test_lstm_cell_shapes_and_gate_formulation():
    rng = np.random.default_rng(2)
    t = Tape()
    x = t.leaf(rand(rng, 3, 6))
    h = t.leaf(np.zeros((3, 4), dtype=F32))
    c = t.leaf(np.zeros((3, 4), dtype=F32))
    w_ih = t.leaf(rand(rng, 6, 16))
    w_hh = t.leaf(rand(rng, 4, 16))
    b = t.leaf(np.zeros(16, dtype=F32))
    h2, c2 = nn.lstm_cell(x, h, c, w_ih, w_hh, b)
    assert h2.shape == (3, 4) and c2.shape == (3, 4)

    # reference: 4-gate formulation with zero initial state
    pre = x.data @ w_ih.data
    sig = lambda a: 1 / (1 + np.exp(-a))
    i, f, g, o = pre[:, :4], pre[:, 4:8], pre[:, 8:12], pre[:, 12:]
    c_ref = sig(i) * np.tanh(g)
    h_ref = sig(o) * np.tanh(c_ref)
    assert np.abs(c2.data - c_ref).max() < 1e-5
    assert np.abs(h2.data - h_ref).max() < 1e-5


def test_shape_mismatch_reports_both_shapes():
    t = Tape()
    a = t.leaf(np.zeros((2, 3), dtype=F32))
    b = t.leaf(np.zeros((4, 5), dtype=F32))
    with pytest.raises(ShapeMismatch) as err:
        nn.add(a, b)
    assert "(2, 3)" in str(err.value) and "(4, 5)" in str(err.value)


# ---------------------------------------------------------------------------
# backward correctness


def test_quadratic_gradient():
    t = Tape()
    x = t.leaf(np.array([3.0, -2.0], dtype=F32))
    loss = nn.tsum(nn.mul(x, x))
    g = t.backward(loss).wrt(x)
    assert np.allclose(g, [6.0, -4.0])


def test_softmax_ce_gradient_closed_form():
    rng = np.random.default_rng(4)
    logits = rand(rng, 7, 11)
    targets = rng.integers(0, 11, size=7)
    t = Tape()
    lt = t.leaf(logits)
    loss = nn.tsum(nn.softmax_cross_entropy(lt, targets))
    g = t.backward(loss).wrt(lt)
    expect = nn.softmax(logits.astype(np.float64))
    for r, c in enumerate(targets):
        expect[r, c] -= 1.0
    assert np.abs(g - expect).max() < 1e-6


def test_backward_requires_scalar_root():
    t = Tape()
    x = t.leaf(np.ones(3, dtype=F32))
    y = nn.mul(x, x)
    with pytest.raises(ShapeMismatch):
        t.backward(y)


def test_backward_linearity():
    rng = np.random.default_rng(8)
    x0 = rand(rng, 6)

    def f(x):
        return nn.tsum(nn.mul(x, x))

    def g(x):
        return nn.tsum(nn.tanh(x))

    a, b = 2.5, -1.25
    t1 = Tape()
    x1 = t1.leaf(x0)
    ga = t1.backward(f(x1)).wrt(x1)
    t2 = Tape()
    x2 = t2.leaf(x0)
    gb = t2.backward(g(x2)).wrt(x2)
    t3 = Tape()
    x3 = t3.leaf(x0)
    combined = nn.add(nn.scale(f(x3), a), nn.scale(g(x3), b))
    gc = t3.backward(combined).wrt(x3)
    assert np.abs(gc - (a * ga + b * gb)).max() < 1e-6


def test_detached_tensor_gets_no_gradient():
    t = Tape()
    x = t.leaf(np.ones(4, dtype=F32))
    y = nn.mul(x, x)
    d = y.detach()
    assert d.tape is None and d.node_id is None
    loss = nn.tsum(nn.mul(y, Tensor(np.full(4, 2.0, dtype=F32))))
    g = t.backward(loss)
    assert np.allclose(g.wrt(x), 4.0)  # only through the tracked path


def test_retain_grad_contract():
    t = Tape()
    x = t.leaf(np.array([1.0, 2.0], dtype=F32))
    mid = nn.mul(x, x)
    out = nn.tsum(nn.scale(mid, 2.0))
    g = t.backward(out)
    with pytest.raises(NotRetained):
        g.wrt(mid)

    t = Tape()
    x = t.leaf(np.array([1.0, 2.0], dtype=F32))
    mid = nn.mul(x, x).retain_grad()
    out = nn.tsum(nn.scale(mid, 2.0))
    g = t.backward(out)
    got = g.wrt_intermediate(mid)
    assert np.allclose(got.data, [2.0, 2.0])
    assert got.tape is None  # detached


def test_grad_wrt_intermediate_shape_contract():
    rng = np.random.default_rng(13)
    t = Tape()
    x = t.leaf(rand(rng, 16, 12, 12))
    mid = nn.relu(x).retain_grad()
    out = nn.tsum(mid)
    g = t.backward(out).wrt_intermediate(mid)
    assert g.shape == (16, 12, 12)


def test_multiple_backwards_on_one_tape_are_independent():
    t = Tape()
    x = t.leaf(np.array([1.0, -1.0], dtype=F32))
    y = nn.tsum(nn.mul(x, x))
    g1 = t.backward(y).wrt(x)
    g2 = t.backward(y).wrt(x)
    assert np.array_equal(g1, g2)


# ---------------------------------------------------------------------------
# finite-difference checks per op


def test_fd_matmul():
    rng = np.random.default_rng(21)
    arrs = [rand(rng, 4, 5), rand(rng, 5, 3)]
    fn = lambda a, b: nn.tsum(nn.tanh(nn.matmul(a, b)))
    check_grad(fn, arrs, 0)
    check_grad(fn, arrs, 1)


def test_fd_conv2d():
    rng = np.random.default_rng(22)
    arrs = [rand(rng, 2, 3, 6, 6), rand(rng, 4, 3, 3, 3), rand(rng, 4)]
    fn = lambda x, w, b: nn.tsum(nn.tanh(nn.conv2d(x, w, b, stride=2, pad=1)))
    for i in range(3):
        check_grad(fn, arrs, i)


def test_fd_conv2d_transpose():
    rng = np.random.default_rng(23)
    arrs = [rand(rng, 2, 4, 5, 5), rand(rng, 4, 3, 4, 4), rand(rng, 3)]
    fn = lambda x, w, b: nn.tsum(nn.tanh(nn.conv2d_transpose(x, w, b, stride=2, pad=1)))
    for i in range(3):
        check_grad(fn, arrs, i)


def test_fd_lstm_cell():
    rng = np.random.default_rng(24)
    arrs = [rand(rng, 3, 5), rand(rng, 3, 4), rand(rng, 3, 4),
            rand(rng, 5, 16), rand(rng, 4, 16), rand(rng, 16) * 0.1]
    fn = lambda x, h, c, wi, wh, b: nn.tsum(
        nn.mul(*nn.lstm_cell(x, h, c, wi, wh, b)))
    for i in range(6):
        check_grad(fn, arrs, i)


def test_fd_broadcast_mul_and_spatial_scale():
    rng = np.random.default_rng(25)
    arrs = [rand(rng, 5, 4, 4), rand(rng, 4, 4)]
    fn = lambda f, a: nn.tsum(nn.tanh(nn.scale_spatial(f, a)))
    check_grad(fn, arrs, 0)
    check_grad(fn, arrs, 1)


def test_fd_l1_and_abs():
    rng = np.random.default_rng(26)
    arrs = [rand(rng, 6, 6) + 2.0, rand(rng, 6, 6) - 2.0]  # keep away from ties
    fn = lambda a, b: nn.l1_loss(a, b)
    check_grad(fn, arrs, 0)
    check_grad(fn, arrs, 1)


def test_fd_softmax_ce():
    rng = np.random.default_rng(27)
    arrs = [rand(rng, 5, 9)]
    targets = rng.integers(0, 9, size=5)
    fn = lambda l: nn.tmean(nn.softmax_cross_entropy(l, targets))
    check_grad(fn, arrs, 0)


def test_fd_misc_ops():
    rng = np.random.default_rng(28)
    arrs = [rand(rng, 3, 7) * 0.5 + 1.5]  # positive, for log
    check_grad(lambda x: nn.tsum(nn.log(x)), arrs, 0)
    check_grad(lambda x: nn.tsum(nn.exp(nn.scale(x, 0.3))), arrs, 0)
    check_grad(lambda x: nn.tsum(nn.sigmoid(x)), arrs, 0)
    check_grad(lambda x: nn.tsum(nn.softplus(x)), arrs, 0)
    check_grad(lambda x: nn.tmean(nn.div(x, nn.add(x, x))), arrs, 0)

    arrs2 = [rand(rng, 4, 6)]
    check_grad(lambda x: nn.tsum(nn.tanh(nn.narrow(x, 1, 2, 3))), arrs2, 0)
    check_grad(lambda x: nn.tsum(nn.tanh(nn.reshape(x, (2, 12)))), arrs2, 0)
    check_grad(lambda x: nn.tsum(nn.tanh(nn.concat([x, x], axis=1))), arrs2, 0)


def test_fd_gather_rows():
    rng = np.random.default_rng(29)
    arrs = [rand(rng, 10, 4)]
    idx = np.array([1, 3, 3, 7])
    fn = lambda w: nn.tsum(nn.tanh(nn.gather_rows(w, idx)))
    check_grad(fn, arrs, 0)


def test_tape_determinism_bitwise():
    def run():
        rng = np.random.default_rng(77)
        t = Tape()
        x = t.leaf(rand(rng, 4, 3, 8, 8))
        w = t.leaf(rand(rng, 5, 3, 3, 3))
        y = nn.conv2d(x, w, stride=1, pad=1)
        loss = nn.tmean(nn.mul(y, y))
        g = t.backward(loss)
        return loss.item(), g.wrt(x).tobytes(), g.wrt(w).tobytes()

    assert run() == run()
