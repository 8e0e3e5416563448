"""Parking-lot world: slot layout, obstacles, seeded scenario sampling."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..geometry import OrientedRect, normalize_angle
from .vehicle import VehicleParams, VehicleState


@dataclass(frozen=True)
class Slot:
    x: float
    y: float
    psi: float        # heading of a nose-in parked vehicle
    depth: float      # extent along psi
    width: float      # extent across psi

    def rect(self) -> OrientedRect:
        return OrientedRect(self.x, self.y, self.psi, self.depth, self.width)

    def pose(self) -> tuple[float, float, float]:
        return self.x, self.y, self.psi


@dataclass
class ParkingLot:
    bounds: tuple[float, float, float, float]  # xmin, ymin, xmax, ymax
    slots: list[Slot]
    obstacles: list[OrientedRect]
    target_slot_index: int

    def __post_init__(self):
        if not (0 <= self.target_slot_index < len(self.slots)):
            raise ValueError("target_slot_index out of range")
        xmin, ymin, xmax, ymax = self.bounds
        for ob in self.obstacles:
            bx0, by0, bx1, by1 = ob.aabb()
            if bx0 < xmin or by0 < ymin or bx1 > xmax or by1 > ymax:
                raise ValueError("obstacle outside lot bounds")

    @property
    def target_slot(self) -> Slot:
        return self.slots[self.target_slot_index]

    def contains_point(self, x: float, y: float) -> bool:
        xmin, ymin, xmax, ymax = self.bounds
        return xmin <= x <= xmax and ymin <= y <= ymax

    def slot_of_point(self, x: float, y: float) -> int | None:
        """Index of the slot whose rectangle contains the point, else None."""
        for i, slot in enumerate(self.slots):
            if slot.rect().contains_point(x, y):
                return i
        return None


@dataclass(frozen=True)
class WorldConfig:
    lot_width_m: float = 50.0
    lot_height_m: float = 40.0
    slots_per_row: int = 16
    slot_width_m: float = 2.8
    slot_depth_m: float = 5.5
    slot_pitch_m: float = 3.0
    row_margin_m: float = 1.0
    occupancy: float = 0.5          # probability a non-target slot holds a car
    parked_length_m: float = 4.4
    parked_width_m: float = 1.9
    parked_jitter_m: float = 0.12
    parked_jitter_rad: float = 0.05
    start_dist_min_m: float = 6.0
    start_dist_max_m: float = 14.0
    start_lateral_margin_m: float = 3.0


@dataclass(frozen=True)
class Scenario:
    lot: ParkingLot
    start: VehicleState
    seed: int


def build_lot(cfg: WorldConfig, rng: np.random.Generator,
              target_slot_index: int) -> ParkingLot:
    """Two facing rows of slots along the top and bottom lot edges.

    Non-target slots are occupied by jittered parked-car rectangles with
    probability cfg.occupancy.
    """
    W, H = cfg.lot_width_m, cfg.lot_height_m
    span = (cfg.slots_per_row - 1) * cfg.slot_pitch_m + cfg.slot_width_m
    if span + 2 * cfg.row_margin_m > W:
        raise ValueError("slot row does not fit in lot width")
    x0 = 0.5 * (W - span) + 0.5 * cfg.slot_width_m

    slots: list[Slot] = []
    for i in range(cfg.slots_per_row):  # north row, nose-in points +y
        slots.append(Slot(x0 + i * cfg.slot_pitch_m,
                          H - cfg.row_margin_m - 0.5 * cfg.slot_depth_m,
                          math.pi / 2, cfg.slot_depth_m, cfg.slot_width_m))
    for i in range(cfg.slots_per_row):  # south row, nose-in points -y
        slots.append(Slot(x0 + i * cfg.slot_pitch_m,
                          cfg.row_margin_m + 0.5 * cfg.slot_depth_m,
                          -math.pi / 2, cfg.slot_depth_m, cfg.slot_width_m))

    obstacles: list[OrientedRect] = []
    for i, slot in enumerate(slots):
        if i == target_slot_index:
            continue
        if rng.random() < cfg.occupancy:
            du = float(rng.uniform(-cfg.parked_jitter_m, cfg.parked_jitter_m))
            dv = float(rng.uniform(-cfg.parked_jitter_m, cfg.parked_jitter_m))
            dpsi = float(rng.uniform(-cfg.parked_jitter_rad, cfg.parked_jitter_rad))
            c, s = math.cos(slot.psi), math.sin(slot.psi)
            obstacles.append(OrientedRect(
                slot.x + du * c - dv * s, slot.y + du * s + dv * c,
                normalize_angle(slot.psi + dpsi),
                cfg.parked_length_m, cfg.parked_width_m))
    return ParkingLot(bounds=(0.0, 0.0, W, H), slots=slots,
                      obstacles=obstacles, target_slot_index=target_slot_index)


def slot_entrance(slot: Slot) -> tuple[float, float]:
    """Point at the open (aisle-side) edge of the slot."""
    return (slot.x - 0.5 * slot.depth * math.cos(slot.psi),
            slot.y - 0.5 * slot.depth * math.sin(slot.psi))


def sample_scenario(cfg: WorldConfig, params: VehicleParams, seed: int,
                    slot_choices: list[int] | None = None) -> Scenario:
    """Deterministic scenario: lot with obstacles plus a collision-free start.

    The start pose sits in the aisle at a seeded distance from the target
    slot entrance, heading roughly along the aisle toward it.
    """
    rng = np.random.default_rng(seed)
    n_slots = 2 * cfg.slots_per_row
    if slot_choices:
        target = int(slot_choices[int(rng.integers(len(slot_choices)))])
    else:
        target = int(rng.integers(n_slots))
    if not 0 <= target < n_slots:
        raise ValueError("slot choice out of range")
    lot = build_lot(cfg, rng, target)

    ex, ey = slot_entrance(lot.target_slot)
    ymin = cfg.slot_depth_m + cfg.start_lateral_margin_m
    ymax = cfg.lot_height_m - ymin
    for _ in range(200):
        d = float(rng.uniform(cfg.start_dist_min_m, cfg.start_dist_max_m))
        ang = float(rng.uniform(0.0, 2.0 * math.pi))
        sx = ex + d * math.cos(ang)
        sy = ey + d * math.sin(ang)
        if not (cfg.row_margin_m + 2.0 <= sx <= cfg.lot_width_m - cfg.row_margin_m - 2.0
                and ymin <= sy <= ymax):
            continue
        # Face roughly toward the slot entrance with seeded jitter.
        heading = normalize_angle(
            math.atan2(ey - sy, ex - sx) + float(rng.uniform(-0.5, 0.5)))
        state = VehicleState(sx, sy, heading, 0.0)
        from .episode import check_collision  # local import avoids a cycle
        if not check_collision(state, lot, params):
            return Scenario(lot=lot, start=state, seed=seed)
    raise RuntimeError(f"could not sample a collision-free start for seed {seed}")
