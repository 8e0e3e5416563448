"""Displacement predictor: per-frame MLP encoder, LSTM over a 4-frame
history, Gaussian mean/variance heads, and the episode pose estimator
built on top of it.

Trained standalone on expert data and frozen; policy training always uses
ground-truth poses, so this module only participates at inference.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .data import Dataset
from .nn import ParameterSet, Tape, Tensor, adam_step
from .nn.checkpoint import load_tensors, save_tensors
from .nn.params import init_linear, init_lstm
from .sim.vehicle import ControlCommand, Gear, VehicleParams
from .tokens import TokenVocabulary

FRAME_DIM = 9        # steering, throttle, brake, gear sign, v, a_long, a_lat, sin, cos
HISTORY_LEN = 4
SIGMA2_MIN, SIGMA2_MAX = 1e-6, 1.0


@dataclass(frozen=True)
class MotionConfig:
    encoder_hidden: int = 32
    lstm_hidden: int = 64
    head_hidden: int = 32
    single_frame: bool = False       # ablation: no recurrence, newest frame only


@dataclass(frozen=True)
class DisplacementPrediction:
    mu: np.ndarray        # (2,) meters, world frame
    sigma2: np.ndarray    # (2,) per-axis variance, clamped

    def __post_init__(self):
        assert self.mu.shape == (2,) and self.sigma2.shape == (2,)


def command_features(cmd: ControlCommand) -> list[float]:
    return [cmd.steering, cmd.throttle, cmd.brake, cmd.gear.sign]


class MotionPredictor:
    def __init__(self, config: MotionConfig | None = None, seed: int = 0,
                 params: ParameterSet | None = None):
        self.config = config or MotionConfig()
        self.params = params if params is not None else self._init(seed)

    def _init(self, seed: int) -> ParameterSet:
        cfg = self.config
        rng = np.random.default_rng(seed)
        p = ParameterSet()
        init_linear(p, rng, "enc.h1", FRAME_DIM, cfg.encoder_hidden)
        init_linear(p, rng, "enc.h2", cfg.encoder_hidden, cfg.encoder_hidden)
        if not cfg.single_frame:
            init_lstm(p, rng, "lstm", cfg.encoder_hidden, cfg.lstm_hidden)
        latent = cfg.encoder_hidden if cfg.single_frame else cfg.lstm_hidden
        init_linear(p, rng, "mu.h1", latent, cfg.head_hidden)
        init_linear(p, rng, "mu.h2", cfg.head_hidden, 2)
        init_linear(p, rng, "var.h1", latent, cfg.head_hidden)
        init_linear(p, rng, "var.h2", cfg.head_hidden, 2)
        return p

    def forward(self, leaves, history: np.ndarray) -> tuple[Tensor, Tensor]:
        """history (N, 4, 9) -> (mu (N, 2), sigma2 (N, 2) clamped)."""
        cfg = self.config
        n = history.shape[0]
        frames = range(HISTORY_LEN - 1, HISTORY_LEN) if cfg.single_frame \
            else range(HISTORY_LEN)
        latent = None
        h = Tensor(np.zeros((n, cfg.lstm_hidden), dtype=np.float32))
        c = Tensor(np.zeros((n, cfg.lstm_hidden), dtype=np.float32))
        for k in frames:
            x = Tensor(np.ascontiguousarray(history[:, k, :]))
            e = nn.relu(nn.linear(x, leaves["enc.h1.w"], leaves["enc.h1.b"]))
            e = nn.relu(nn.linear(e, leaves["enc.h2.w"], leaves["enc.h2.b"]))
            if cfg.single_frame:
                latent = e
            else:
                h, c = nn.lstm_cell(e, h, c, leaves["lstm.w_ih"],
                                    leaves["lstm.w_hh"], leaves["lstm.b"])
                latent = h
        mu_h = nn.relu(nn.linear(latent, leaves["mu.h1.w"], leaves["mu.h1.b"]))
        mu = nn.linear(mu_h, leaves["mu.h2.w"], leaves["mu.h2.b"])
        var_h = nn.relu(nn.linear(latent, leaves["var.h1.w"], leaves["var.h1.b"]))
        logvar = nn.linear(var_h, leaves["var.h2.w"], leaves["var.h2.b"])
        sigma2 = nn.clip(nn.exp(logvar), SIGMA2_MIN, SIGMA2_MAX)
        return mu, sigma2

    def predict(self, history: np.ndarray) -> DisplacementPrediction:
        """Single-window inference on a (4, 9) history array."""
        tape = Tape()
        leaves = self.params.bind(tape)
        mu, sigma2 = self.forward(leaves, history[None].astype(np.float32))
        return DisplacementPrediction(mu=mu.data[0].copy(),
                                      sigma2=sigma2.data[0].copy())

    def save(self, path) -> None:
        tensors = dict(self.params.as_dict())
        tensors["config.single_frame"] = np.array(
            float(self.config.single_frame), dtype=np.float32)
        save_tensors(path, tensors)

    @classmethod
    def load(cls, path) -> "MotionPredictor":
        tensors = load_tensors(path)
        single = bool(tensors.pop("config.single_frame", np.array(0.0)) > 0.5)
        cfg = MotionConfig(single_frame=single)
        params = ParameterSet()
        for name, arr in tensors.items():
            params.add(name, arr)
        return cls(cfg, params=params)


def nll(mu: Tensor, sigma2: Tensor, target: np.ndarray) -> Tensor:
    """Per-sample independent-axis Gaussian negative log-likelihood (N,)."""
    t = Tensor(np.asarray(target, dtype=np.float32))
    resid = nn.sub(t, mu)
    quad = nn.div(nn.mul(resid, resid), nn.scale(sigma2, 2.0))
    logterm = nn.scale(nn.log(nn.scale(sigma2, 2.0 * math.pi)), 0.5)
    return nn.tsum(nn.add(logterm, quad), axis=1)


def update_position(prev: tuple[float, float],
                    pred: DisplacementPrediction) -> tuple[float, float]:
    return prev[0] + float(pred.mu[0]), prev[1] + float(pred.mu[1])


# ---------------------------------------------------------------------------
# training windows from expert data


def history_windows(dataset: Dataset, vocab: TokenVocabulary
                    ) -> tuple[np.ndarray, np.ndarray]:
    """(windows (M, 4, 9), targets (M, 2)) from per-episode record runs.

    The command executed at frame k is reconstructed from the previous
    record's first future-step tokens (quantized exactly like everything
    the policy executes at inference).
    """
    windows, targets = [], []
    for sl in dataset.episode_slices():
        recs = dataset.records[sl]
        n = len(recs)
        if n < HISTORY_LEN + 2:
            continue
        cmds = np.zeros((n, 4), dtype=np.float32)
        for j in range(1, n):
            cmd = vocab.decode_command(
                [int(t) for t in recs[j - 1]["ctrl_tokens"][:4]])
            cmds[j] = command_features(cmd)
        states = recs["ego"].astype(np.float32)        # (n, 5)
        frames = np.concatenate([cmds, states], axis=1)  # (n, 9)
        for t in range(HISTORY_LEN + 1, n):
            windows.append(frames[t - HISTORY_LEN:t])
            targets.append(recs[t - 1]["disp"])
    if not windows:
        raise ValueError("dataset has no usable motion windows")
    return (np.stack(windows).astype(np.float32),
            np.stack(targets).astype(np.float32))


@dataclass
class MotionTrainConfig:
    lr: float = 1e-3
    batch_size: int = 64
    epochs: int = 30
    seed: int = 0
    val_fraction: float = 0.15


def train_motion(dataset: Dataset, vocab: TokenVocabulary,
                 config: MotionConfig | None = None,
                 train_cfg: MotionTrainConfig | None = None,
                 log=None) -> tuple[MotionPredictor, dict]:
    cfg = config or MotionConfig()
    tc = train_cfg or MotionTrainConfig()
    windows, targets = history_windows(dataset, vocab)
    rng = np.random.default_rng(tc.seed)
    order = rng.permutation(len(windows))
    n_val = max(1, int(len(order) * tc.val_fraction))
    val_idx, train_idx = order[:n_val], order[n_val:]

    model = MotionPredictor(cfg, seed=tc.seed)
    history = {"train_nll": [], "val_nll": []}
    for epoch in range(tc.epochs):
        perm = rng.permutation(train_idx)
        losses = []
        for i in range(0, len(perm), tc.batch_size):
            idx = perm[i:i + tc.batch_size]
            tape = Tape()
            leaves = model.params.bind(tape)
            mu, sigma2 = model.forward(leaves, windows[idx])
            loss = nn.tmean(nll(mu, sigma2, targets[idx]))
            grads_map = tape.backward(loss)
            grads = {name: grads_map.wrt(leaf)
                     for name, leaf in leaves.items()}
            adam_step(model.params, grads, tc.lr)
            losses.append(loss.item())
        tape = Tape()
        leaves = model.params.bind(tape)
        mu, sigma2 = model.forward(leaves, windows[val_idx])
        val = nn.tmean(nll(mu, sigma2, targets[val_idx])).item()
        history["train_nll"].append(float(np.mean(losses)))
        history["val_nll"].append(val)
        if log:
            log(f"epoch {epoch}: train_nll={np.mean(losses):.4f} val_nll={val:.4f}")
    return model, history


# ---------------------------------------------------------------------------
# closed-loop pose estimation


class PoseEstimator:
    """Tracks (x, y, heading) during an episode from a frozen predictor.

    The first `bootstrap_ticks` control steps return the true pose (the
    history is not full yet); afterwards position integrates predicted
    displacements and heading integrates commanded bicycle kinematics.
    """

    def __init__(self, predictor: MotionPredictor, params: VehicleParams,
                 bootstrap_ticks: int = HISTORY_LEN, control_dt: float = 0.1):
        self.predictor = predictor
        self.params = params
        self.bootstrap_ticks = bootstrap_ticks
        self.control_dt = control_dt
        self._frames: list[np.ndarray] = []
        self._prev_state = None
        self._est = (0.0, 0.0, 0.0)

    def reset(self, obs) -> None:
        self._frames = []
        self._prev_state = None
        self._est = (obs.state.x_m, obs.state.y_m, obs.state.psi_rad)

    def estimate(self, obs, observed, last_cmd: ControlCommand
                 ) -> tuple[float, float, float]:
        if obs.tick > 0 and self._prev_state is not None:
            prev = self._prev_state
            c, s = math.cos(prev.psi_rad), math.sin(prev.psi_rad)
            a_long = prev.a_mps2[0] * c + prev.a_mps2[1] * s
            a_lat = -prev.a_mps2[0] * s + prev.a_mps2[1] * c
            frame = np.array(command_features(last_cmd)
                             + [prev.v_mps, a_long, a_lat, s, c],
                             dtype=np.float32)
            self._frames.append(frame)

            if obs.tick <= self.bootstrap_ticks:
                self._est = (obs.state.x_m, obs.state.y_m, obs.state.psi_rad)
            else:
                pred = self.predictor.predict(
                    np.stack(self._frames[-HISTORY_LEN:]))
                x, y = update_position(self._est[:2], pred)
                steer = last_cmd.steering * self.params.max_steer_rad
                psi = self._est[2] + (prev.v_mps / self.params.wheelbase_m
                                      * math.tan(steer) * self.control_dt)
                self._est = (x, y, psi)
        self._prev_state = observed
        return self._est
