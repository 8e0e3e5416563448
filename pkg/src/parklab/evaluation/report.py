"""Table emitters and figure rendering for evaluation outputs.

Every report writes delimited data (CSV, plus Markdown where useful) and
renders matplotlib figures next to it, so a run directory is readable
both by scripts and by eyeball.
"""
from __future__ import annotations

import csv
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from ..sim.world import ParkingLot
from .metrics import METRIC_OUTCOMES, MetricsReport


def write_csv(path, rows: list[dict], columns: list[str] | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not rows:
        path.write_text("")
        return
    columns = columns or list(rows[0].keys())
    with path.open("w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=columns, extrasaction="ignore")
        writer.writeheader()
        writer.writerows(rows)


def write_markdown(path, rows: list[dict], columns: list[str] | None = None,
                   title: str = "") -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not rows:
        path.write_text(f"# {title}\n\n(no rows)\n")
        return
    columns = columns or list(rows[0].keys())
    lines = []
    if title:
        lines.append(f"# {title}")
        lines.append("")
    lines.append("| " + " | ".join(columns) + " |")
    lines.append("|" + "|".join("---" for _ in columns) + "|")
    for row in rows:
        lines.append("| " + " | ".join(str(row.get(c, "")) for c in columns)
                     + " |")
    path.write_text("\n".join(lines) + "\n")


def metrics_table_rows(reports: dict[str, MetricsReport],
                       flags: dict[str, dict] | None = None) -> list[dict]:
    rows = []
    for name, report in reports.items():
        row = {"method": name}
        if flags and name in flags:
            row.update(flags[name])
        for metric in METRIC_OUTCOMES:
            row[metric] = f"{report.means[metric]:.1f} +/- {report.stds[metric]:.1f}"
        row["episodes"] = report.n_episodes
        row["errors"] = report.n_error
        rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# figures


def outcome_bars(reports: dict[str, MetricsReport], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    metrics = list(METRIC_OUTCOMES)
    names = list(reports)
    width = 0.8 / max(len(names), 1)
    fig, ax = plt.subplots(figsize=(8, 4))
    x = np.arange(len(metrics))
    for k, name in enumerate(names):
        vals = [reports[name].means[m] for m in metrics]
        errs = [reports[name].stds[m] for m in metrics]
        ax.bar(x + k * width, vals, width, yerr=errs, capsize=2, label=name)
    ax.set_xticks(x + width * (len(names) - 1) / 2)
    ax.set_xticklabels(metrics)
    ax.set_ylabel("rate (%)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def noise_sweep_lines(rows: list[dict], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    kinds = sorted({r["noise"] for r in rows})
    methods = sorted({r.get("method", "policy") for r in rows})
    fig, axes = plt.subplots(1, len(kinds), figsize=(5 * len(kinds), 3.5),
                             squeeze=False)
    for ax, kind in zip(axes[0], kinds):
        for method in methods:
            pts = [(r["level"], r["delta_tsr"]) for r in rows
                   if r["noise"] == kind and r.get("method", "policy") == method]
            pts.sort()
            if pts:
                ax.plot([p[0] for p in pts], [p[1] for p in pts],
                        marker="o", label=method)
        ax.set_xlabel(kind)
        ax.set_ylabel("TSR change (%)")
        ax.axhline(0.0, color="gray", lw=0.5)
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def training_curves(metrics_csv, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    steps, totals, val_steps, vals = [], [], [], []
    with open(metrics_csv) as f:
        for row in csv.DictReader(f):
            if row["total"]:
                steps.append(int(row["step"]))
                totals.append(float(row["total"]))
            if row["val_total"]:
                val_steps.append(int(row["step"]))
                vals.append(float(row["val_total"]))
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(steps, totals, lw=0.6, label="train total")
    if val_steps:
        ax.plot(val_steps, vals, marker="o", label="validation")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def attention_heatmap(attention: np.ndarray, path,
                      goal_ego: tuple[float, float] | None = None,
                      cell_m: float = 2.0) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    size = attention.shape[0]
    half = size * cell_m / 2
    fig, ax = plt.subplots(figsize=(4, 4))
    im = ax.imshow(attention.T, origin="lower",
                   extent=(-half, half, -half, half), cmap="viridis")
    if goal_ego is not None:
        ax.plot([goal_ego[0]], [goal_ego[1]], "r*", markersize=12)
    ax.set_xlabel("ego x (m)")
    ax.set_ylabel("ego y (m)")
    fig.colorbar(im, shrink=0.8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def trajectory_plot(lot: ParkingLot, trajectories: dict[str, list], path) -> None:
    """Overhead view of the lot with one or more episode paths."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(7, 6))
    xmin, ymin, xmax, ymax = lot.bounds
    ax.add_patch(plt.Rectangle((xmin, ymin), xmax - xmin, ymax - ymin,
                               fill=False, ec="black"))
    for i, slot in enumerate(lot.slots):
        corners = slot.rect().corners()
        color = "tab:green" if i == lot.target_slot_index else "lightgray"
        ax.add_patch(plt.Polygon(corners, fill=False, ec=color, lw=1.2))
    for ob in lot.obstacles:
        ax.add_patch(plt.Polygon(ob.corners(), color="tab:red", alpha=0.5))
    for name, pts in trajectories.items():
        xs = [p.state.x_m for p in pts]
        ys = [p.state.y_m for p in pts]
        ax.plot(xs, ys, lw=1.2, label=name)
        ax.plot(xs[0], ys[0], "o", ms=4)
    ax.set_aspect("equal")
    if trajectories:
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
