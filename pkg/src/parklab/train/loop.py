"""Imitation training loop: seeded shuffles, per-epoch validation,
best/final checkpoints, CSV metrics log.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from ..data import Dataset, check_vocab
from ..nn import Tape, adam_step
from ..nn.checkpoint import save_tensors
from ..policy import ParkingPolicyNet, PolicyConfig, one_hot_bev, teacher_inputs
from ..tokens import TokenVocabulary
from .losses import LossDiverged, total_loss


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 32
    epochs: int = 20
    seed: int = 0
    val_fraction: float = 0.18          # episode-level split
    use_goal_tokens: bool = True
    use_waypoints: bool = True
    use_grad_attention: bool = True
    attn_stop_grad: bool = False
    caa_from_predicted: bool = False
    loss_weights: dict = field(default_factory=dict)
    divergence_factor: float = 10.0

    def policy_config(self, grid_size: int = 96) -> PolicyConfig:
        return PolicyConfig(grid_size=grid_size,
                            use_goal_tokens=self.use_goal_tokens,
                            use_waypoints=self.use_waypoints,
                            use_grad_attention=self.use_grad_attention,
                            attn_stop_grad=self.attn_stop_grad)


def split_episodes(dataset: Dataset, val_fraction: float,
                   seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Record indices for (train, val), split at episode granularity."""
    rng = np.random.default_rng(seed)
    slices = dataset.episode_slices()
    if not slices:
        idx = np.arange(len(dataset))
        cut = max(1, int(len(idx) * val_fraction))
        return idx[cut:], idx[:cut]
    order = rng.permutation(len(slices))
    n_val = max(1, int(round(len(slices) * val_fraction)))
    val_eps = set(order[:n_val].tolist())
    train_idx, val_idx = [], []
    for e, sl in enumerate(slices):
        (val_idx if e in val_eps else train_idx).extend(
            range(sl.start, sl.stop))
    return np.array(train_idx), np.array(val_idx)


def batch_arrays(dataset: Dataset, idx: np.ndarray,
                 vocab: TokenVocabulary) -> dict:
    recs = dataset.records[idx]
    grid = dataset.grid_size
    ctrl = recs["ctrl_tokens"].astype(np.int64)
    wp = recs["wp_tokens"].astype(np.int64).reshape(-1, 4, 3)
    wp_bins = wp.copy()
    wp_bins[..., 0] -= vocab.offsets["wp_dx"]
    wp_bins[..., 1] -= vocab.offsets["wp_dy"]
    wp_bins[..., 2] -= vocab.offsets["wp_dpsi"]
    return {
        "bev": one_hot_bev(recs["bev"], grid),
        "ego": recs["ego"].astype(np.float32),
        "goal": recs["goal"].astype(np.float32),
        "ctrl_tokens": ctrl,
        "teacher_in": teacher_inputs(vocab, ctrl),
        "wp_bins": wp_bins,
        "seg": recs["seg"].reshape(-1, grid, grid).astype(np.int64),
    }


def evaluate_loss(net: ParkingPolicyNet, dataset: Dataset, idx: np.ndarray,
                  vocab: TokenVocabulary, cfg: TrainConfig,
                  batch_size: int = 64) -> float:
    total, count = 0.0, 0
    for i in range(0, len(idx), batch_size):
        batch = batch_arrays(dataset, idx[i:i + batch_size], vocab)
        tape = Tape()
        leaves = net.params.bind(tape)
        out = net.forward(leaves, batch["bev"], batch["ego"], batch["goal"],
                          batch["teacher_in"])
        _, breakdown = total_loss(
            out, batch, tape, cfg.loss_weights,
            caa_from_predicted=cfg.caa_from_predicted,
            use_waypoints=cfg.use_waypoints,
            use_grad_attention=cfg.use_grad_attention)
        n = len(batch["ego"])
        total += breakdown["total"] * n
        count += n
    return total / max(count, 1)


def train(dataset: Dataset, vocab: TokenVocabulary, out_dir,
          config: TrainConfig | None = None, log=None) -> dict:
    """Train a policy; returns summary with checkpoint paths and history."""
    cfg = config or TrainConfig()
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    check_vocab(dataset, vocab)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    net = ParkingPolicyNet(cfg.policy_config(dataset.grid_size), vocab,
                           seed=cfg.seed)
    train_idx, val_idx = split_episodes(dataset, cfg.val_fraction, cfg.seed)
    rng = np.random.default_rng(cfg.seed + 1)

    metrics_path = out_dir / "metrics.csv"
    best_path = out_dir / "policy_best.caap"
    final_path = out_dir / "policy_final.caap"
    writer_file = open(metrics_path, "w", newline="")
    writer = csv.writer(writer_file)
    writer.writerow(["epoch", "step", "L_c", "L_w", "L_s", "L_C",
                     "total", "val_total"])

    val0 = evaluate_loss(net, dataset, val_idx, vocab, cfg)
    best_val = math.inf
    history = {"val": [val0]}
    step = 0
    try:
        for epoch in range(cfg.epochs):
            perm = rng.permutation(train_idx)
            for i in range(0, len(perm), cfg.batch_size):
                batch = batch_arrays(dataset, perm[i:i + cfg.batch_size], vocab)
                tape = Tape()
                leaves = net.params.bind(tape)
                out = net.forward(leaves, batch["bev"], batch["ego"],
                                  batch["goal"], batch["teacher_in"])
                loss, breakdown = total_loss(
                    out, batch, tape, cfg.loss_weights,
                    caa_from_predicted=cfg.caa_from_predicted,
                    use_waypoints=cfg.use_waypoints,
                    use_grad_attention=cfg.use_grad_attention)
                grads_map = tape.backward(loss)
                grads = {name: grads_map.wrt(leaf)
                         for name, leaf in leaves.items()}
                adam_step(net.params, grads, cfg.lr)
                writer.writerow([epoch, step,
                                 f"{breakdown.get('control', 0.0):.6f}",
                                 f"{breakdown.get('waypoint', 0.0):.6f}",
                                 f"{breakdown.get('seg', 0.0):.6f}",
                                 f"{breakdown.get('attn', 0.0):.6f}",
                                 f"{breakdown['total']:.6f}", ""])
                step += 1
            val = evaluate_loss(net, dataset, val_idx, vocab, cfg)
            history["val"].append(val)
            writer.writerow([epoch, step, "", "", "", "", "", f"{val:.6f}"])
            if log:
                log(f"epoch {epoch}: val={val:.4f}")
            if val < best_val:
                best_val = val
                save_tensors(best_path, net.params.as_dict())
            if not math.isfinite(val) or val > cfg.divergence_factor * val0:
                raise LossDiverged(
                    f"validation loss {val:.3f} exceeds "
                    f"{cfg.divergence_factor}x initial {val0:.3f}")
    finally:
        writer_file.close()

    save_tensors(final_path, net.params.as_dict())
    return {
        "best_checkpoint": str(best_path),
        "final_checkpoint": str(final_path),
        "metrics_csv": str(metrics_path),
        "best_val": best_val,
        "initial_val": val0,
        "history": history,
        "train_frames": int(len(train_idx)),
        "val_frames": int(len(val_idx)),
        "config": asdict(cfg),
    }
