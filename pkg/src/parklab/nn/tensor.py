"""Tape-based reverse-mode autodiff over dense float32 numpy arrays.

Every op records a node on the active Tape; Tape.backward walks nodes in
reverse insertion order, which is a valid topological order because nodes
only reference earlier nodes. Gradients of a scalar are available for
leaves (parameters) and for intermediates explicitly marked retain_grad,
and come back as plain numpy arrays, so anything built from them is
detached by construction (no second-order terms).
"""
from __future__ import annotations

import math
import weakref
from contextlib import contextmanager
from typing import Callable, Optional, Sequence

import numpy as np

F32 = np.float32

# Module-wide working dtype. float32 is the contract; float64 exists so
# finite-difference probes can run the same forward in double precision.
_DTYPE = {"value": np.float32}


def default_dtype():
    return _DTYPE["value"]


@contextmanager
def precision(dtype):
    prev = _DTYPE["value"]
    _DTYPE["value"] = dtype
    try:
        yield
    finally:
        _DTYPE["value"] = prev


class ShapeMismatch(ValueError):
    pass


class NotRetained(RuntimeError):
    pass


def _f32(x) -> np.ndarray:
    return np.asarray(x, dtype=_DTYPE["value"])


class Tensor:
    """Dense array, optionally recorded on a tape.

    The tape link is weak: op pullbacks close over tensors and live inside
    the tape, so a strong link would cycle and keep every forward pass
    alive until a full GC.
    """

    __slots__ = ("data", "_tape_ref", "node_id", "retained", "name")

    def __init__(self, data, tape: Optional["Tape"] = None,
                 node_id: Optional[int] = None, name: str = ""):
        self.data = _f32(data)
        self._tape_ref = weakref.ref(tape) if tape is not None else None
        self.node_id = node_id
        self.retained = False
        self.name = name

    @property
    def tape(self) -> Optional["Tape"]:
        return self._tape_ref() if self._tape_ref is not None else None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def retain_grad(self) -> "Tensor":
        if self.node_id is None:
            raise ValueError("cannot retain grad on a detached tensor")
        self.retained = True
        return self

    def __repr__(self):
        return f"Tensor(shape={self.shape}, tracked={self.node_id is not None})"


class _Node:
    __slots__ = ("parents", "pullback")

    def __init__(self, parents: tuple[int, ...],
                 pullback: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]]):
        self.parents = parents
        self.pullback = pullback


class Tape:
    """Append-only op record; one tape per forward/backward context."""

    def __init__(self):
        self._nodes: list[_Node] = []

    def __len__(self):
        return len(self._nodes)

    def leaf(self, data, name: str = "") -> Tensor:
        nid = len(self._nodes)
        self._nodes.append(_Node((), None))
        return Tensor(data, self, nid, name=name)

    def _record(self, data: np.ndarray, parents: tuple[Tensor, ...],
                pullback) -> Tensor:
        parent_ids = tuple(p.node_id for p in parents if p.node_id is not None)
        nid = len(self._nodes)
        # Map pullback outputs (one per parent tensor) onto tracked parents.
        tracked_pos = [i for i, p in enumerate(parents) if p.node_id is not None]

        def wrapped(grad, _pb=pullback, _pos=tracked_pos):
            outs = _pb(grad)
            return [outs[i] for i in _pos]

        self._nodes.append(_Node(parent_ids, wrapped))
        return Tensor(data, self, nid)

    def backward(self, root: Tensor) -> "Gradients":
        """Accumulate d(root)/d(node) for every node reachable from root."""
        if root.tape is not self or root.node_id is None:
            raise ValueError("root is not recorded on this tape")
        if root.data.shape != ():
            raise ShapeMismatch(
                f"backward root must be scalar, got shape {root.data.shape}")
        grads: list[Optional[np.ndarray]] = [None] * len(self._nodes)
        grads[root.node_id] = np.ones((), dtype=root.data.dtype)
        for nid in range(root.node_id, -1, -1):
            g = grads[nid]
            if g is None:
                continue
            node = self._nodes[nid]
            if node.pullback is None:
                continue
            parent_grads = node.pullback(g)
            for pid, pg in zip(node.parents, parent_grads):
                if pg is None:
                    continue
                if grads[pid] is None:
                    grads[pid] = np.array(pg, copy=True)
                else:
                    grads[pid] = grads[pid] + pg
        return Gradients(self, grads)


class Gradients:
    """Backward result; indexes gradients by the tensor they belong to."""

    def __init__(self, tape: Tape, grads: list[Optional[np.ndarray]]):
        self._tape = tape
        self._grads = grads

    def wrt(self, t: Tensor) -> np.ndarray:
        if t.tape is not self._tape or t.node_id is None:
            raise ValueError("tensor is not recorded on this tape")
        is_leaf = self._tape._nodes[t.node_id].pullback is None
        if not (is_leaf or t.retained):
            raise NotRetained(
                "intermediate was not marked retain_grad before forward")
        g = self._grads[t.node_id]
        if g is None:
            return np.zeros(t.shape, dtype=t.data.dtype)
        return g

    def wrt_intermediate(self, t: Tensor) -> Tensor:
        """Detached tensor carrying d(root)/d(t); requires retain_grad."""
        return Tensor(self.wrt(t).copy())


# ---------------------------------------------------------------------------
# op helpers

def _tape_of(*ts: Tensor) -> Optional[Tape]:
    tape = None
    for t in ts:
        if t.tape is not None:
            if tape is not None and t.tape is not tape:
                raise ValueError("tensors live on different tapes")
            tape = t.tape
    return tape


def _make(data: np.ndarray, parents: tuple[Tensor, ...], pullback) -> Tensor:
    tape = _tape_of(*parents)
    if tape is None:
        return Tensor(data)
    return tape._record(data, parents, pullback)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcasted gradient back to its source shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeMismatch(f"{op}: shapes {a.shape} and {b.shape}") from exc


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# arithmetic

def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    out = a.data + b.data
    return _make(out, (a, b), lambda g: (_unbroadcast(g, a.shape),
                                         _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    out = a.data - b.data
    return _make(out, (a, b), lambda g: (_unbroadcast(g, a.shape),
                                         _unbroadcast(-g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    out = a.data * b.data
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape),
                            _unbroadcast(g * a.data, b.shape)))


def div(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "div")
    out = a.data / b.data
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * a.data / (b.data * b.data), b.shape)))


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def scale(a: Tensor, k: float) -> Tensor:
    kk = a.data.dtype.type(k)
    return _make(a.data * kk, (a,), lambda g: (g * kk,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """(..., m, k) @ (k, n) or (..., m, k) @ (..., k, n)."""
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeMismatch(f"matmul needs >=2D operands, got {a.shape} x {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul: inner dims {a.shape} x {b.shape}")
    out = a.data @ b.data

    def pull(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(out, (a, b), pull)


# ---------------------------------------------------------------------------
# nonlinearities

def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(np.where(mask, a.data, a.data.dtype.type(0)), (a,),
                 lambda g: (g * mask,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-a.data))
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a: Tensor) -> Tensor:
    # log(1 + e^x), stable for large |x|
    out = np.logaddexp(a.data.dtype.type(0), a.data)
    sig = 1.0 / (1.0 + np.exp(-a.data))
    return _make(out, (a,), lambda g: (g * sig,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values; gradient passes only where unclamped."""
    mask = (a.data >= lo) & (a.data <= hi)
    out = np.clip(a.data, a.data.dtype.type(lo), a.data.dtype.type(hi))
    return _make(out, (a,), lambda g: (g * mask,))


def absolute(a: Tensor) -> Tensor:
    sign = np.sign(a.data)  # subgradient 0 at ties
    return _make(np.abs(a.data), (a,), lambda g: (g * sign,))


# ---------------------------------------------------------------------------
# structure

def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def pull(g):
        return tuple(np.ascontiguousarray(piece)
                     for piece in np.split(g, splits, axis=axis))

    return _make(out, tuple(tensors), pull)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice along one axis."""
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)

    def pull(g):
        full = np.zeros(a.shape, dtype=a.data.dtype)
        full[idx] = g
        return (full,)

    return _make(a.data[idx].copy(), (a,), pull)


def transpose(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    inv = tuple(int(i) for i in np.argsort(axes))
    return _make(np.ascontiguousarray(a.data.transpose(axes)), (a,),
                 lambda g: (np.ascontiguousarray(g.transpose(inv)),))


def take_along_last(a: Tensor, indices: np.ndarray) -> Tensor:
    """Pick one entry along the last axis: a (..., V), indices (...) -> (...)."""
    idx = np.asarray(indices)
    if idx.shape != a.shape[:-1]:
        raise ShapeMismatch(
            f"take_along_last: values {a.shape}, indices {idx.shape}")
    out = np.take_along_axis(a.data, idx[..., None], axis=-1)[..., 0]

    def pull(g):
        ga = np.zeros(a.shape, dtype=a.data.dtype)
        np.put_along_axis(ga, idx[..., None], g[..., None], axis=-1)
        return (ga,)

    return _make(out.copy(), (a,), pull)


def gather_rows(w: Tensor, indices: np.ndarray) -> Tensor:
    """Row lookup (embedding): w[(indices)] for integer index arrays."""
    idx = np.asarray(indices)
    out = w.data[idx]

    def pull(g):
        gw = np.zeros(w.shape, dtype=w.data.dtype)
        np.add.at(gw, idx, g)
        return (gw,)

    return _make(out, (w,), pull)


# ---------------------------------------------------------------------------
# reductions

def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def pull(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.shape),)

    return _make(out, (a,), pull)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = 1
        for ax in axes:
            count *= a.shape[ax]
    return scale(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


# ---------------------------------------------------------------------------
# convolution (im2col)

def _out_hw(h: int, w: int, kh: int, kw: int, stride: int, pad: int):
    return (h + 2 * pad - kh) // stride + 1, (w + 2 * pad - kw) // stride + 1


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    n, c, h, w = x.shape
    ho, wo = _out_hw(h, w, kh, kw, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    s = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp, (n, c, kh, kw, ho, wo),
        (s[0], s[1], s[2], s[3], s[2] * stride, s[3] * stride))
    return np.ascontiguousarray(view).reshape(n, c * kh * kw, ho * wo)


def _col2im(cols: np.ndarray, x_shape, kh: int, kw: int, stride: int,
            pad: int) -> np.ndarray:
    n, c, h, w = x_shape
    ho, wo = _out_hw(h, w, kh, kw, stride, pad)
    cols6 = cols.reshape(n, c, kh, kw, ho, wo)
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                cols6[:, :, i, j]
    return xp[:, :, pad:pad + h, pad:pad + w] if pad else xp


def conv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None,
           stride: int = 1, pad: int = 0) -> Tensor:
    """x (N, C, H, W) * w (F, C, kh, kw) -> (N, F, Ho, Wo)."""
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeMismatch(f"conv2d: x {x.shape}, w {w.shape}")
    n, c, h, wi = x.shape
    f, cw, kh, kw = w.shape
    if c != cw:
        raise ShapeMismatch(f"conv2d channels: x {x.shape}, w {w.shape}")
    ho, wo = _out_hw(h, wi, kh, kw, stride, pad)
    cols = _im2col(x.data, kh, kw, stride, pad)          # (N, K, P)
    w2 = w.data.reshape(f, -1)                            # (F, K)
    out = np.matmul(w2, cols).reshape(n, f, ho, wo)
    if b is not None:
        out = out + b.data.reshape(1, f, 1, 1)

    def pull(g):
        g2 = g.reshape(n, f, ho * wo)                    # (N, F, P)
        gw = np.einsum("nfp,nkp->fk", g2, cols, optimize=True).reshape(w.shape)
        gcols = np.matmul(w2.T, g2)                      # (N, K, P)
        gx = _col2im(gcols, x.shape, kh, kw, stride, pad)
        gb = None if b is None else g.sum(axis=(0, 2, 3))
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    if b is None:
        return _make(out, parents, lambda g: pull(g)[:2])
    return _make(out, parents, pull)


def conv2d_transpose(x: Tensor, w: Tensor, b: Optional[Tensor] = None,
                     stride: int = 1, pad: int = 0) -> Tensor:
    """x (N, Cin, H, W) * w (Cin, Cout, kh, kw) -> upsampled (N, Cout, Ho, Wo).

    Output size Ho = (H - 1) * stride - 2 * pad + kh; the op is the adjoint
    of conv2d with the same stride/pad.
    """
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeMismatch(f"conv2d_transpose: x {x.shape}, w {w.shape}")
    n, cin, h, wi = x.shape
    cw, cout, kh, kw = w.shape
    if cin != cw:
        raise ShapeMismatch(f"conv2d_transpose channels: x {x.shape}, w {w.shape}")
    ho = (h - 1) * stride - 2 * pad + kh
    wo = (wi - 1) * stride - 2 * pad + kw
    w2 = w.data.reshape(cin, -1)                          # (Cin, K), K = Cout*kh*kw
    x2 = x.data.reshape(n, cin, h * wi)
    cols = np.matmul(w2.T, x2)                            # (N, K, H*W)
    out = _col2im(cols, (n, cout, ho, wo), kh, kw, stride, pad)
    if b is not None:
        out = out + b.data.reshape(1, cout, 1, 1)

    def pull(g):
        gcols = _im2col(g, kh, kw, stride, pad)           # (N, K, H*W)
        gx = np.matmul(w2, gcols).reshape(x.shape)
        gw = np.einsum("ncp,nkp->ck", x2, gcols, optimize=True).reshape(w.shape)
        gb = None if b is None else g.sum(axis=(0, 2, 3))
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    if b is None:
        return _make(out, parents, lambda g: pull(g)[:2])
    return _make(out, parents, pull)


# ---------------------------------------------------------------------------
# composite / loss ops

def scale_spatial(features: Tensor, attention: Tensor) -> Tensor:
    """Weight (..., C, X, Y) features by an (..., X, Y) map, broadcast over C."""
    if features.shape[-2:] != attention.shape[-2:]:
        raise ShapeMismatch(
            f"scale_spatial: features {features.shape}, map {attention.shape}")
    expanded = reshape(attention,
                       attention.shape[:-2] + (1,) + attention.shape[-2:])
    return mul(features, expanded)


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """Plain numpy softmax (inference helper, no tape)."""
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Per-row CE loss: logits (..., V), integer targets (...) -> losses (...)."""
    t = np.asarray(targets)
    if t.shape != logits.shape[:-1]:
        raise ShapeMismatch(
            f"softmax_cross_entropy: logits {logits.shape}, targets {t.shape}")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=-1))
    picked = np.take_along_axis(z, t[..., None], axis=-1)[..., 0]
    out = np.asarray(logsumexp - picked, dtype=logits.data.dtype)
    probs = softmax(logits.data)

    def pull(g):
        gl = probs.copy()
        np.put_along_axis(
            gl, t[..., None],
            np.take_along_axis(gl, t[..., None], axis=-1) - 1.0, axis=-1)
        return (gl * g[..., None],)

    return _make(out, (logits,), pull)


def l1_loss(a: Tensor, b: Tensor) -> Tensor:
    """Mean absolute difference; subgradient 0 at exact ties."""
    if a.shape != b.shape:
        raise ShapeMismatch(f"l1_loss: {a.shape} vs {b.shape}")
    return tmean(absolute(sub(a, b)))


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """x (..., in) @ w (in, out) + b."""
    out = matmul(x, w)
    return out if b is None else add(out, b)


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, w_ih: Tensor, w_hh: Tensor,
              b: Tensor) -> tuple[Tensor, Tensor]:
    """Standard 4-gate LSTM cell; gate order (input, forget, cell, output).

    x (N, in), h/c (N, H), w_ih (in, 4H), w_hh (H, 4H), b (4H).
    """
    hidden = h.shape[-1]
    pre = add(add(matmul(x, w_ih), matmul(h, w_hh)), b)
    i = sigmoid(narrow(pre, -1, 0, hidden))
    f = sigmoid(narrow(pre, -1, hidden, hidden))
    g = tanh(narrow(pre, -1, 2 * hidden, hidden))
    o = sigmoid(narrow(pre, -1, 3 * hidden, hidden))
    c_new = add(mul(f, c), mul(i, g))
    h_new = mul(o, tanh(c_new))
    return h_new, c_new
