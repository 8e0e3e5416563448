"""Ego-centric semantic occupancy grid standing in for camera perception."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..geometry import OrientedRect
from .vehicle import VehicleParams, VehicleState
from .world import ParkingLot

FREE, OBSTACLE, TARGET_SLOT = 0, 1, 2
N_CLASSES = 3

# PGM gray levels per class (documented in the file header comment too)
_CLASS_GRAY = {FREE: 255, OBSTACLE: 0, TARGET_SLOT: 128}


@dataclass(frozen=True)
class BevSpec:
    size: int = 96                   # grid is size x size
    resolution_m_per_cell: float = 0.25

    @property
    def extent_m(self) -> float:
        return self.size * self.resolution_m_per_cell


@dataclass(frozen=True)
class BevGrid:
    cells: np.ndarray                # (size, size) uint8, [ix, iy], x-forward
    resolution_m_per_cell: float

    @property
    def size(self) -> int:
        return self.cells.shape[0]


def cell_centers_ego(spec: BevSpec) -> tuple[np.ndarray, np.ndarray]:
    """Ego-frame coordinates of every cell center.

    cells[ix, iy] covers ego-frame x in [(ix - size/2) * res, ...) with
    x forward and y to the vehicle's left; the grid is centered on the
    vehicle body center.
    """
    half = spec.size / 2.0
    coords = (np.arange(spec.size) - half + 0.5) * spec.resolution_m_per_cell
    gx, gy = np.meshgrid(coords, coords, indexing="ij")
    return gx, gy


def render_bev(state: VehicleState, lot: ParkingLot, spec: BevSpec,
               noise_prob: float = 0.0, rng_seed: int = 0,
               params: VehicleParams | None = None) -> BevGrid:
    """Rasterize the lot around the vehicle.

    A cell takes the label of whatever covers its center: obstacles win
    over the target slot; cells centered outside the lot bounds read as
    Obstacle (walls). Label-flip noise then replaces each cell's label,
    independently with probability noise_prob, by one of the two other
    labels (deterministic in rng_seed).
    """
    params = params or VehicleParams()
    cx, cy = state.body_center(params)
    gx, gy = cell_centers_ego(spec)
    c, s = math.cos(state.psi_rad), math.sin(state.psi_rad)
    wx = cx + gx * c - gy * s
    wy = cy + gx * s + gy * c
    pts = np.stack([wx.ravel(), wy.ravel()], axis=1)

    labels = np.full(pts.shape[0], FREE, dtype=np.uint8)
    target_rect = lot.target_slot.rect()
    labels[target_rect.contains_points(pts)] = TARGET_SLOT
    for ob in lot.obstacles:
        labels[ob.contains_points(pts)] = OBSTACLE
    xmin, ymin, xmax, ymax = lot.bounds
    outside = ((pts[:, 0] < xmin) | (pts[:, 0] > xmax)
               | (pts[:, 1] < ymin) | (pts[:, 1] > ymax))
    labels[outside] = OBSTACLE

    if noise_prob > 0.0:
        rng = np.random.default_rng(rng_seed)
        flip = rng.random(labels.shape) < noise_prob
        shift = rng.integers(1, N_CLASSES, size=labels.shape).astype(np.uint8)
        labels = np.where(flip, (labels + shift) % N_CLASSES, labels).astype(np.uint8)

    return BevGrid(cells=labels.reshape(spec.size, spec.size),
                   resolution_m_per_cell=spec.resolution_m_per_cell)


def bev_to_pgm(grid: BevGrid) -> bytes:
    """Binary PGM (P5), one byte per cell; mapping documented in the header."""
    h, w = grid.cells.shape
    header = (f"P5\n# class gray levels: free={_CLASS_GRAY[FREE]} "
              f"obstacle={_CLASS_GRAY[OBSTACLE]} target={_CLASS_GRAY[TARGET_SLOT]}\n"
              f"{w} {h}\n255\n").encode("ascii")
    lut = np.zeros(256, dtype=np.uint8)
    for cls, gray in _CLASS_GRAY.items():
        lut[cls] = gray
    return header + lut[grid.cells].tobytes()


def write_pgm(grid: BevGrid, path) -> None:
    with open(path, "wb") as f:
        f.write(bev_to_pgm(grid))


def array_to_pgm(values: np.ndarray, path) -> None:
    """Save a float array as an 8-bit PGM, rescaled to [0, 255]."""
    v = np.asarray(values, dtype=np.float64)
    lo, hi = float(v.min()), float(v.max())
    scaled = np.zeros_like(v) if hi <= lo else (v - lo) / (hi - lo)
    img = np.round(scaled * 255.0).astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(f"P5\n# rescaled from [{lo:.6g}, {hi:.6g}]\n{w} {h}\n255\n".encode())
        f.write(img.tobytes())
