"""Multi-task imitation losses and the gradient-supervised attention target."""
from __future__ import annotations

import numpy as np

from .. import nn
from ..nn import Gradients, Tape, Tensor
from ..policy.network import PolicyOutputs
from ..tokens import TokenVocabulary


class LossDiverged(RuntimeError):
    pass


def control_loss(logits: Tensor, gt_tokens: np.ndarray) -> Tensor:
    """Teacher-forced token CE summed over the 16 control slots, batch mean."""
    ce = nn.softmax_cross_entropy(logits, gt_tokens)   # (N, 16)
    return nn.tmean(nn.tsum(ce, axis=1))


def waypoint_loss(logits: Tensor, gt_bins: np.ndarray) -> Tensor:
    """CE summed over 4 steps x 3 dims of 200-way heads, batch mean."""
    ce = nn.softmax_cross_entropy(logits, gt_bins)     # (N, 4, 3)
    return nn.tmean(nn.tsum(nn.reshape(ce, (ce.shape[0], 12)), axis=1))


def seg_loss(logits: Tensor, gt_cells: np.ndarray) -> Tensor:
    """Per-cell 3-way CE against the clean grid, mean over cells and batch."""
    nhwc = nn.transpose(logits, (0, 2, 3, 1))
    return nn.tmean(nn.softmax_cross_entropy(nhwc, gt_cells))


def attention_target(tape: Tape, control_logits: Tensor,
                     gt_tokens: np.ndarray, bev_feature: Tensor,
                     from_predicted: bool = False) -> np.ndarray:
    """Detached supervision map for the attention head.

    Backward pass #1: sum the logits assigned to the selected control
    tokens (ground truth by default, the argmax prediction otherwise),
    differentiate w.r.t. the projected BEV feature, aggregate absolute
    per-channel gradients, and normalize each sample's map into [0, 1].
    """
    if from_predicted:
        sel = np.argmax(control_logits.data, axis=-1)
    else:
        sel = gt_tokens
    score = nn.tsum(nn.take_along_last(control_logits, sel))
    grads = tape.backward(score)
    g = grads.wrt(bev_feature)                  # (N, C, X, Y), plain numpy
    target = np.abs(g).mean(axis=1)             # channel-aggregated
    peak = target.max(axis=(1, 2), keepdims=True)
    return (target / (peak + 1e-6)).astype(np.float32)


def attention_loss(attention: Tensor, target: np.ndarray) -> Tensor:
    """Mean absolute difference against the detached gradient target."""
    return nn.l1_loss(attention, Tensor(target))


def total_loss(outputs: PolicyOutputs, batch: dict, tape: Tape,
               weights: dict | None = None,
               caa_from_predicted: bool = False,
               use_waypoints: bool = True,
               use_grad_attention: bool = True) -> tuple[Tensor, dict]:
    """Weighted multi-task sum plus a per-term float breakdown."""
    w = {"control": 1.0, "waypoint": 1.0, "seg": 1.0, "attn": 1.0,
         **(weights or {})}
    terms: dict[str, Tensor] = {}
    terms["control"] = control_loss(outputs.control_logits, batch["ctrl_tokens"])
    if use_waypoints:
        terms["waypoint"] = waypoint_loss(outputs.waypoint_logits,
                                          batch["wp_bins"])
    terms["seg"] = seg_loss(outputs.seg_logits, batch["seg"])
    if use_grad_attention:
        target = attention_target(tape, outputs.control_logits,
                                  batch["ctrl_tokens"], outputs.bev_feature,
                                  from_predicted=caa_from_predicted)
        terms["attn"] = attention_loss(outputs.attention, target)

    breakdown = {}
    total = None
    for name, term in terms.items():
        value = term.item()
        if not np.isfinite(value):
            raise LossDiverged(f"loss term {name!r} is {value}")
        breakdown[name] = value
        weighted = nn.scale(term, w[name])
        total = weighted if total is None else nn.add(total, weighted)
    breakdown["total"] = total.item()
    return total, breakdown
