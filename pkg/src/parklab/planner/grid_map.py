"""World-frame occupancy grid with disk inflation for planning."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..sim.bev import BevGrid, OBSTACLE, cell_centers_ego, BevSpec
from ..sim.vehicle import VehicleParams, VehicleState
from ..sim.world import ParkingLot


def disc_cover_radius(params: VehicleParams) -> float:
    """Radius of three discs along the body axis that cover the body rect."""
    return math.hypot(params.body_width_m / 2.0, params.body_length_m / 6.0)


def disc_centers(x: float, y: float, psi: float,
                 params: VehicleParams) -> np.ndarray:
    """(3, 2) disc centers for a rear-axle pose."""
    c, s = math.cos(psi), math.sin(psi)
    bx = x + 0.5 * params.wheelbase_m * c
    by = y + 0.5 * params.wheelbase_m * s
    step = params.body_length_m / 3.0
    return np.array([[bx - step * c, by - step * s],
                     [bx, by],
                     [bx + step * c, by + step * s]])


@dataclass
class GridMap:
    occupancy: np.ndarray          # bool (nx, ny), raw obstacles
    inflated: np.ndarray           # bool, disk-dilated by inflation_m
    resolution_m_per_cell: float
    origin: tuple[float, float]    # world coords of the (0, 0) cell corner
    inflation_m: float

    def world_to_cell(self, xs: np.ndarray, ys: np.ndarray):
        ix = np.floor((xs - self.origin[0]) / self.resolution_m_per_cell).astype(int)
        iy = np.floor((ys - self.origin[1]) / self.resolution_m_per_cell).astype(int)
        return ix, iy

    def points_blocked(self, pts: np.ndarray) -> np.ndarray:
        """Inflated-occupancy lookup; out-of-grid points read as blocked."""
        ix, iy = self.world_to_cell(pts[..., 0], pts[..., 1])
        nx, ny = self.inflated.shape
        inside = (ix >= 0) & (ix < nx) & (iy >= 0) & (iy < ny)
        blocked = np.ones(ix.shape, dtype=bool)
        blocked[inside] = self.inflated[ix[inside], iy[inside]]
        return blocked

    def pose_blocked(self, x: float, y: float, psi: float,
                     params: VehicleParams) -> bool:
        return bool(self.points_blocked(disc_centers(x, y, psi, params)).any())

    def with_start_clearance(self, x: float, y: float, psi: float,
                             params: VehicleParams) -> "GridMap":
        """Copy with the inflation halo cleared around a wedged start pose.

        Only halo cells (inflated but not raw-occupied) are cleared, so the
        planner can escape a start inside the safety margin but never plan
        through a real obstacle.
        """
        res = self.resolution_m_per_cell
        nx, ny = self.inflated.shape
        cx = self.origin[0] + (np.arange(nx) + 0.5) * res
        cy = self.origin[1] + (np.arange(ny) + 0.5) * res
        gx, gy = np.meshgrid(cx, cy, indexing="ij")
        clear = np.zeros((nx, ny), dtype=bool)
        r = self.inflation_m
        for px, py in disc_centers(x, y, psi, params):
            clear |= (gx - px) ** 2 + (gy - py) ** 2 <= r * r
        inflated = self.inflated & ~(clear & ~self.occupancy)
        return GridMap(self.occupancy, inflated, res, self.origin,
                       self.inflation_m)


def _inflate(occ: np.ndarray, radius_m: float, res: float) -> np.ndarray:
    r = int(math.ceil(radius_m / res))
    if r <= 0:
        return occ.copy()
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    disk = (xx * xx + yy * yy) <= r * r
    return ndimage.binary_dilation(occ, structure=disk)


def grid_from_lot(lot: ParkingLot, params: VehicleParams,
                  resolution: float = 0.25,
                  inflation_m: float | None = None) -> GridMap:
    """Ground-truth rasterization of the lot's obstacle rectangles."""
    if inflation_m is None:
        inflation_m = disc_cover_radius(params)
    xmin, ymin, xmax, ymax = lot.bounds
    nx = int(round((xmax - xmin) / resolution))
    ny = int(round((ymax - ymin) / resolution))
    cx = xmin + (np.arange(nx) + 0.5) * resolution
    cy = ymin + (np.arange(ny) + 0.5) * resolution
    gx, gy = np.meshgrid(cx, cy, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    occ = np.zeros(pts.shape[0], dtype=bool)
    for ob in lot.obstacles:
        occ |= ob.contains_points(pts)
    occ = occ.reshape(nx, ny)
    return GridMap(occ, _inflate(occ, inflation_m, resolution), resolution,
                   (xmin, ymin), inflation_m)


def grid_from_bev(bev: BevGrid, ego: VehicleState, lot_bounds,
                  params: VehicleParams, resolution: float = 0.25,
                  inflation_m: float | None = None,
                  despeckle: bool = True) -> GridMap:
    """Project a (possibly noisy) ego-centric BEV into a world-frame map.

    Cells the BEV cannot see keep their prior (free); isolated obstacle
    pixels are removed first when despeckle is set, since single flipped
    cells otherwise dilate into fake walls.
    """
    if inflation_m is None:
        inflation_m = disc_cover_radius(params)
    obstacle_mask = bev.cells == OBSTACLE
    if despeckle:
        neighbor_count = ndimage.convolve(
            obstacle_mask.astype(np.int8), np.ones((3, 3), dtype=np.int8),
            mode="constant") - obstacle_mask
        obstacle_mask &= neighbor_count > 0

    spec = BevSpec(size=bev.size, resolution_m_per_cell=bev.resolution_m_per_cell)
    gx, gy = cell_centers_ego(spec)
    c, s = math.cos(ego.psi_rad), math.sin(ego.psi_rad)
    bx, by = ego.body_center(params)
    wx = bx + gx * c - gy * s
    wy = by + gx * s + gy * c

    xmin, ymin, xmax, ymax = lot_bounds
    nx = int(round((xmax - xmin) / resolution))
    ny = int(round((ymax - ymin) / resolution))
    occ = np.zeros((nx, ny), dtype=bool)
    ox = wx[obstacle_mask]
    oy = wy[obstacle_mask]
    ix = np.floor((ox - xmin) / resolution).astype(int)
    iy = np.floor((oy - ymin) / resolution).astype(int)
    keep = (ix >= 0) & (ix < nx) & (iy >= 0) & (iy < ny)
    occ[ix[keep], iy[keep]] = True
    return GridMap(occ, _inflate(occ, inflation_m, resolution), resolution,
                   (xmin, ymin), inflation_m)
