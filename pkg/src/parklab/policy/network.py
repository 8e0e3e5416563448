"""Imitation policy: fused input tokens, spatial attention weighted by
control-gradient supervision, autoregressive control decoding, waypoint
and segmentation heads.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .. import nn
from ..nn import ParameterSet, Tape, Tensor
from ..nn.params import init_conv, init_conv_transpose, init_linear, init_lstm
from ..tokens import TokenVocabulary
from ..sim.bev import N_CLASSES


@dataclass(frozen=True)
class PolicyConfig:
    grid_size: int = 96
    conv_channels: tuple[int, int, int] = (8, 16, 32)
    d_bev: int = 128
    d_ego: int = 32
    d_goal: int = 32
    bev_feat_channels: int = 16     # C_b
    bev_feat_size: int = 12         # X_b = Y_b
    attn_hidden: int = 8
    embed_dim: int = 48
    decoder_hidden: int = 96
    waypoint_hidden: int = 192
    seg_channels: tuple[int, int] = (16, 8)
    use_goal_tokens: bool = True    # goal MLP branch (zeroed when off)
    use_waypoints: bool = True
    use_grad_attention: bool = True # attention head + map (identity when off)
    attn_stop_grad: bool = False    # feed the attention head a detached feature

    @property
    def d_fused(self) -> int:
        return self.d_bev + self.d_ego + self.d_goal

    @property
    def bev_feat_flat(self) -> int:
        return self.bev_feat_channels * self.bev_feat_size ** 2


@dataclass
class PolicyOutputs:
    control_logits: Tensor            # (N, 16, vocab)
    waypoint_logits: Optional[Tensor] # (N, 4, 3, 200)
    seg_logits: Tensor                # (N, 3, H, W)
    attention: Tensor                 # (N, X_b, Y_b)
    fused: Tensor                     # (N, d_fused)
    bev_feature: Tensor               # (N, C_b, X_b, Y_b), retain-grad marked
    feat_attended: Tensor             # (N, C_b, X_b, Y_b)


class MalformedRollout(RuntimeError):
    pass


def one_hot_bev(cells: np.ndarray, grid_size: int) -> np.ndarray:
    """uint8 cell labels (N, H*W) or (N, H, W) -> float32 (N, 3, H, W)."""
    cells = cells.reshape(cells.shape[0], grid_size, grid_size)
    out = np.zeros((cells.shape[0], N_CLASSES, grid_size, grid_size),
                   dtype=np.float32)
    for c in range(N_CLASSES):
        out[:, c] = cells == c
    return out


class ParkingPolicyNet:
    EGO_DIM = 5
    GOAL_DIM = 4
    CONTROL_POSITIONS = 16   # 4 steps x 4 channels

    def __init__(self, config: PolicyConfig, vocab: TokenVocabulary,
                 seed: int = 0, params: ParameterSet | None = None):
        self.config = config
        self.vocab = vocab
        self.params = params if params is not None else self._init_params(seed)

    def _init_params(self, seed: int) -> ParameterSet:
        cfg = self.config
        rng = np.random.default_rng(seed)
        p = ParameterSet()
        c1, c2, c3 = cfg.conv_channels
        init_conv(p, rng, "enc.conv1", N_CLASSES, c1, 3)
        init_conv(p, rng, "enc.conv2", c1, c2, 3)
        init_conv(p, rng, "enc.conv3", c2, c3, 3)
        init_linear(p, rng, "enc.bev_out", c3, cfg.d_bev)
        init_linear(p, rng, "enc.ego1", self.EGO_DIM, 64)
        init_linear(p, rng, "enc.ego2", 64, cfg.d_ego)
        init_linear(p, rng, "enc.goal1", self.GOAL_DIM, 64)
        init_linear(p, rng, "enc.goal2", 64, cfg.d_goal)

        init_linear(p, rng, "proj.lift", cfg.d_fused, cfg.bev_feat_flat)
        init_conv(p, rng, "proj.conv", cfg.bev_feat_channels,
                  cfg.bev_feat_channels, 3)

        if cfg.use_grad_attention:
            init_conv(p, rng, "attn.reduce", cfg.bev_feat_channels,
                      cfg.attn_hidden, 1)
            init_conv(p, rng, "attn.mix", cfg.attn_hidden, cfg.attn_hidden, 3)
            init_conv(p, rng, "attn.collapse", cfg.attn_hidden, 1, 1)

        init_linear(p, rng, "dec.context", cfg.bev_feat_flat, cfg.decoder_hidden)
        p.add("dec.embed", np.asarray(
            rng.uniform(-0.05, 0.05, (self.vocab.vocab_size, cfg.embed_dim)),
            dtype=np.float32))
        init_lstm(p, rng, "dec.lstm", cfg.embed_dim + cfg.decoder_hidden,
                  cfg.decoder_hidden)
        init_linear(p, rng, "dec.out", cfg.decoder_hidden, self.vocab.vocab_size)

        if cfg.use_waypoints:
            init_linear(p, rng, "wp.h1", cfg.bev_feat_flat, cfg.waypoint_hidden)
            init_linear(p, rng, "wp.h2", cfg.waypoint_hidden, 4 * 3 * 200)

        s1, s2 = cfg.seg_channels
        c3 = cfg.conv_channels[-1]
        init_conv_transpose(p, rng, "seg.up1", c3, s1, 2)
        init_conv_transpose(p, rng, "seg.up2", s1, s2, 2)
        init_conv_transpose(p, rng, "seg.up3", s2, N_CLASSES, 2)
        return p

    # -- forward pieces ------------------------------------------------------

    def encode_inputs(self, leaves, bev_onehot: np.ndarray, ego: np.ndarray,
                      goal: np.ndarray) -> tuple[Tensor, Tensor]:
        """Fused feature (N, d_fused) and the spatial conv feature."""
        cfg = self.config
        x = Tensor(bev_onehot)
        h = nn.relu(nn.conv2d(x, leaves["enc.conv1.w"], leaves["enc.conv1.b"],
                              stride=2, pad=1))
        h = nn.relu(nn.conv2d(h, leaves["enc.conv2.w"], leaves["enc.conv2.b"],
                              stride=2, pad=1))
        conv_feat = nn.relu(nn.conv2d(h, leaves["enc.conv3.w"],
                                      leaves["enc.conv3.b"], stride=2, pad=1))
        pooled = nn.tmean(conv_feat, axis=(2, 3))
        f_bev = nn.linear(pooled, leaves["enc.bev_out.w"], leaves["enc.bev_out.b"])

        e = nn.relu(nn.linear(Tensor(ego), leaves["enc.ego1.w"],
                              leaves["enc.ego1.b"]))
        f_ego = nn.linear(e, leaves["enc.ego2.w"], leaves["enc.ego2.b"])

        if cfg.use_goal_tokens:
            g = nn.relu(nn.linear(Tensor(goal), leaves["enc.goal1.w"],
                                  leaves["enc.goal1.b"]))
            f_goal = nn.linear(g, leaves["enc.goal2.w"], leaves["enc.goal2.b"])
        else:
            f_goal = Tensor(np.zeros((ego.shape[0], cfg.d_goal),
                                     dtype=np.float32))
        fused = nn.concat([f_bev, f_ego, f_goal], axis=1)
        return fused, conv_feat

    def bev_project(self, leaves, fused: Tensor) -> Tensor:
        cfg = self.config
        lifted = nn.linear(fused, leaves["proj.lift.w"], leaves["proj.lift.b"])
        grid = nn.reshape(lifted, (fused.shape[0], cfg.bev_feat_channels,
                                   cfg.bev_feat_size, cfg.bev_feat_size))
        out = nn.relu(nn.conv2d(grid, leaves["proj.conv.w"],
                                leaves["proj.conv.b"], stride=1, pad=1))
        out.retain_grad()
        return out

    def predict_attention(self, leaves, bev_feature: Tensor) -> Tensor:
        h = nn.relu(nn.conv2d(bev_feature, leaves["attn.reduce.w"],
                              leaves["attn.reduce.b"], stride=1, pad=0))
        h = nn.relu(nn.conv2d(h, leaves["attn.mix.w"], leaves["attn.mix.b"],
                              stride=1, pad=1))
        h = nn.conv2d(h, leaves["attn.collapse.w"], leaves["attn.collapse.b"],
                      stride=1, pad=0)
        flat = nn.reshape(h, (bev_feature.shape[0],) + bev_feature.shape[2:])
        return nn.softplus(flat)

    @staticmethod
    def attend(bev_feature: Tensor, attention: Tensor) -> Tensor:
        return nn.scale_spatial(bev_feature, attention)

    def decode_control(self, leaves, feat: Tensor,
                       tokens_in: np.ndarray) -> Tensor:
        """Teacher-forced logits (N, P, vocab) for P input positions."""
        cfg = self.config
        n = feat.shape[0]
        flat = nn.reshape(feat, (n, cfg.bev_feat_flat))
        context = nn.tanh(nn.linear(flat, leaves["dec.context.w"],
                                    leaves["dec.context.b"]))
        h = Tensor(np.zeros((n, cfg.decoder_hidden), dtype=np.float32))
        c = Tensor(np.zeros((n, cfg.decoder_hidden), dtype=np.float32))
        logits = []
        for pos in range(tokens_in.shape[1]):
            emb = nn.gather_rows(leaves["dec.embed"], tokens_in[:, pos])
            x = nn.concat([emb, context], axis=1)
            h, c = nn.lstm_cell(x, h, c, leaves["dec.lstm.w_ih"],
                                leaves["dec.lstm.w_hh"], leaves["dec.lstm.b"])
            out = nn.linear(h, leaves["dec.out.w"], leaves["dec.out.b"])
            logits.append(nn.reshape(out, (n, 1, self.vocab.vocab_size)))
        return nn.concat(logits, axis=1)

    def decode_waypoints(self, leaves, feat: Tensor) -> Tensor:
        cfg = self.config
        n = feat.shape[0]
        flat = nn.reshape(feat, (n, cfg.bev_feat_flat))
        h = nn.relu(nn.linear(flat, leaves["wp.h1.w"], leaves["wp.h1.b"]))
        out = nn.linear(h, leaves["wp.h2.w"], leaves["wp.h2.b"])
        return nn.reshape(out, (n, 4, 3, 200))

    def seg_head(self, leaves, conv_feat: Tensor) -> Tensor:
        h = nn.relu(nn.conv2d_transpose(conv_feat, leaves["seg.up1.w"],
                                        leaves["seg.up1.b"], stride=2))
        h = nn.relu(nn.conv2d_transpose(h, leaves["seg.up2.w"],
                                        leaves["seg.up2.b"], stride=2))
        return nn.conv2d_transpose(h, leaves["seg.up3.w"], leaves["seg.up3.b"],
                                   stride=2)

    # -- full passes -----------------------------------------------------------

    def forward(self, leaves, bev_onehot: np.ndarray, ego: np.ndarray,
                goal: np.ndarray, tokens_in: np.ndarray) -> PolicyOutputs:
        cfg = self.config
        fused, conv_feat = self.encode_inputs(leaves, bev_onehot, ego, goal)
        bev_feature = self.bev_project(leaves, fused)
        if cfg.use_grad_attention:
            attn_in = (Tensor(bev_feature.data) if cfg.attn_stop_grad
                       else bev_feature)
            attention = self.predict_attention(leaves, attn_in)
            attended = self.attend(bev_feature, attention)
        else:
            attention = Tensor(np.ones(
                (bev_onehot.shape[0], cfg.bev_feat_size, cfg.bev_feat_size),
                dtype=np.float32))
            attended = bev_feature
        control_logits = self.decode_control(leaves, attended, tokens_in)
        waypoint_logits = (self.decode_waypoints(leaves, attended)
                           if cfg.use_waypoints else None)
        seg_logits = self.seg_head(leaves, conv_feat)
        return PolicyOutputs(control_logits=control_logits,
                             waypoint_logits=waypoint_logits,
                             seg_logits=seg_logits, attention=attention,
                             fused=fused, bev_feature=bev_feature,
                             feat_attended=attended)

    def greedy_rollout(self, bev_onehot: np.ndarray, ego: np.ndarray,
                       goal: np.ndarray) -> tuple[list[int], np.ndarray]:
        """Greedy 18-token sequence (BOS..EOS) plus the attention map.

        Ties break to the lowest index (argmax behavior). A token landing
        outside its slot's channel range aborts with MalformedRollout.
        """
        tape = Tape()
        leaves = self.params.bind(tape)
        cfg = self.config
        fused, _ = self.encode_inputs(leaves, bev_onehot, ego, goal)
        bev_feature = self.bev_project(leaves, fused)
        if cfg.use_grad_attention:
            attention = self.predict_attention(leaves, bev_feature)
            attended = self.attend(bev_feature, attention)
        else:
            attention = Tensor(np.ones((1, cfg.bev_feat_size,
                                        cfg.bev_feat_size), dtype=np.float32))
            attended = bev_feature

        flat = nn.reshape(attended, (1, cfg.bev_feat_flat))
        context = nn.tanh(nn.linear(flat, leaves["dec.context.w"],
                                    leaves["dec.context.b"]))
        h = Tensor(np.zeros((1, cfg.decoder_hidden), dtype=np.float32))
        c = Tensor(np.zeros((1, cfg.decoder_hidden), dtype=np.float32))
        seq = [self.vocab.bos]
        for pos in range(self.CONTROL_POSITIONS):
            emb = nn.gather_rows(leaves["dec.embed"],
                                 np.array([seq[-1]]))
            x = nn.concat([emb, context], axis=1)
            h, c = nn.lstm_cell(x, h, c, leaves["dec.lstm.w_ih"],
                                leaves["dec.lstm.w_hh"], leaves["dec.lstm.b"])
            out = nn.linear(h, leaves["dec.out.w"], leaves["dec.out.b"])
            tok = int(np.argmax(out.data[0]))
            expected = self.vocab.slot_channel(pos)
            channel, _ = self.vocab.channel_of(tok)
            if channel != expected:
                raise MalformedRollout(
                    f"position {pos}: argmax {tok} is a {channel} token, "
                    f"slot expects {expected}")
            seq.append(tok)
        seq.append(self.vocab.eos)
        return seq, attention.data[0] if attention.data.ndim == 3 else attention.data


def teacher_inputs(vocab: TokenVocabulary, gt_tokens: np.ndarray) -> np.ndarray:
    """Decoder input positions: BOS followed by the first 15 target tokens."""
    n = gt_tokens.shape[0]
    bos = np.full((n, 1), vocab.bos, dtype=gt_tokens.dtype)
    return np.concatenate([bos, gt_tokens[:, :-1]], axis=1)
