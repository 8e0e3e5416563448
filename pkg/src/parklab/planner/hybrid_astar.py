"""Hybrid A* over (x, y, heading) with fixed-arc bicycle motion primitives."""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from ..geometry import normalize_angle
from ..sim.vehicle import VehicleParams
from .grid_map import GridMap, disc_centers


class Direction(Enum):
    FORWARD = 1
    REVERSE = -1


class PlanningError(RuntimeError):
    pass


class NoPathFound(PlanningError):
    pass


class StartInCollision(PlanningError):
    pass


class GoalInCollision(PlanningError):
    pass


@dataclass(frozen=True)
class PlannerParams:
    arc_length_m: float = 1.0
    substep_m: float = 0.1
    steer_fractions: tuple[float, ...] = (-1.0, -0.5, 0.0, 0.5, 1.0)
    xy_bucket_m: float = 0.5
    heading_bucket_rad: float = math.radians(15.0)
    reverse_penalty_per_m: float = 1.0
    direction_switch_penalty: float = 5.0
    steer_penalty_per_m: float = 0.5
    goal_xy_tol_m: float = 0.25
    goal_heading_tol_rad: float = math.radians(5.0)
    node_budget: int = 200_000


@dataclass
class PlannedPath:
    poses: list[tuple[float, float, float, Direction]]
    cumulative_length_m: float

    def __len__(self):
        return len(self.poses)

    def arclengths(self) -> np.ndarray:
        """Cumulative arc length at every pose."""
        xy = np.array([[p[0], p[1]] for p in self.poses])
        if len(xy) < 2:
            return np.zeros(len(xy))
        seg = np.hypot(*(xy[1:] - xy[:-1]).T)
        return np.concatenate([[0.0], np.cumsum(seg)])

    def cusp_indices(self) -> list[int]:
        """Pose indices where travel direction flips."""
        out = []
        for i in range(1, len(self.poses)):
            if self.poses[i][3] is not self.poses[i - 1][3]:
                out.append(i)
        return out


@dataclass
class _Node:
    x: float
    y: float
    psi: float
    direction: Direction | None
    g: float
    parent: int
    # substep poses from the parent node to this node, (n, 3)
    segment: np.ndarray


class _PrimitiveSet:
    """Stacked local substep offsets for all (steer, direction) primitives."""

    def __init__(self, params: VehicleParams, pp: PlannerParams):
        n_sub = max(1, int(round(pp.arc_length_m / pp.substep_m)))
        arcs = pp.substep_m * np.arange(1, n_sub + 1)
        fracs, dirs, dx, dy, dpsi = [], [], [], [], []
        for frac in pp.steer_fractions:
            kappa = math.tan(frac * params.max_steer_rad) / params.wheelbase_m
            for direction in (Direction.FORWARD, Direction.REVERSE):
                s = arcs * (1.0 if direction is Direction.FORWARD else -1.0)
                if abs(kappa) < 1e-12:
                    dp = np.zeros_like(s)
                    dx.append(s.copy())
                    dy.append(np.zeros_like(s))
                else:
                    dp = kappa * s
                    dx.append(np.sin(dp) / kappa)
                    dy.append((1.0 - np.cos(dp)) / kappa)
                dpsi.append(dp)
                fracs.append(frac)
                dirs.append(direction)
        self.n_sub = n_sub
        self.fracs = np.array(fracs)
        self.dirs = dirs
        self.dx = np.stack(dx)        # (P, n_sub)
        self.dy = np.stack(dy)
        self.dpsi = np.stack(dpsi)


def _heuristic(x, y, psi, goal, min_turn_radius):
    d = math.hypot(goal[0] - x, goal[1] - y)
    dpsi = abs(normalize_angle(psi - goal[2]))
    return max(d, dpsi * min_turn_radius)


def plan_hybrid_astar(start: tuple[float, float, float],
                      goal: tuple[float, float, float],
                      grid: GridMap, params: VehicleParams,
                      pp: PlannerParams | None = None) -> PlannedPath:
    """Search kinematically feasible motion primitives to the goal pose.

    Poses are rear-axle (x, y, heading); continuous states are pruned
    through a coarse 3D closed set; the goal test also runs on primitive
    substeps so the tolerance ball is reachable despite 1 m arcs.
    """
    pp = pp or PlannerParams()
    if grid.pose_blocked(*start, params):
        raise StartInCollision(f"start pose {start} is blocked after inflation")
    if grid.pose_blocked(*goal, params):
        raise GoalInCollision(f"goal pose {goal} is blocked after inflation")

    def near_goal(x, y, psi):
        return (math.hypot(x - goal[0], y - goal[1]) <= pp.goal_xy_tol_m
                and abs(normalize_angle(psi - goal[2])) <= pp.goal_heading_tol_rad)

    start = (start[0], start[1], normalize_angle(start[2]))
    if near_goal(*start):
        return PlannedPath(
            poses=[(start[0], start[1], start[2], Direction.FORWARD)],
            cumulative_length_m=0.0)

    r_min = params.min_turn_radius_m
    prims = _PrimitiveSet(params, pp)
    n_prims = len(prims.dirs)
    body_step = params.body_length_m / 3.0
    half_wb = 0.5 * params.wheelbase_m
    gx, gy, gpsi = goal
    two_pi = 2.0 * math.pi

    def bucket(x, y, psi):
        return (int(math.floor(x / pp.xy_bucket_m)),
                int(math.floor(y / pp.xy_bucket_m)),
                int(math.floor((normalize_angle(psi) + math.pi)
                               / pp.heading_bucket_rad)))

    nodes: list[_Node] = [_Node(*start, None, 0.0, -1, np.empty((0, 3)))]
    best_g: dict[tuple, float] = {bucket(*start): 0.0}
    open_heap: list[tuple[float, float, int, int]] = []
    h0 = _heuristic(*start, goal, r_min)
    counter = 0
    heapq.heappush(open_heap, (h0, h0, counter, 0))
    expansions = 0
    goal_node = -1

    while open_heap:
        f, h, _, nid = heapq.heappop(open_heap)
        node = nodes[nid]
        key = bucket(node.x, node.y, node.psi)
        if node.g > best_g.get(key, math.inf):
            continue  # stale heap entry
        expansions += 1
        if expansions > pp.node_budget:
            raise NoPathFound(
                f"node budget {pp.node_budget} exhausted ({len(nodes)} nodes)")

        cos0, sin0 = math.cos(node.psi), math.sin(node.psi)
        # All primitives at once: (P, n_sub) substep poses.
        X = node.x + prims.dx * cos0 - prims.dy * sin0
        Y = node.y + prims.dx * sin0 + prims.dy * cos0
        PSI = node.psi + prims.dpsi

        # 3-disc body cover along every substep of every primitive.
        cpsi, spsi = np.cos(PSI), np.sin(PSI)
        bx = X + half_wb * cpsi
        by = Y + half_wb * spsi
        px = np.stack([bx - body_step * cpsi, bx, bx + body_step * cpsi], axis=-1)
        py = np.stack([by - body_step * spsi, by, by + body_step * spsi], axis=-1)
        blocked = grid.points_blocked(
            np.stack([px, py], axis=-1)).any(axis=(1, 2))   # (P,)

        near_xy = np.hypot(X - gx, Y - gy) <= pp.goal_xy_tol_m
        if near_xy.any():
            dpsi_goal = np.abs((PSI - gpsi + math.pi) % two_pi - math.pi)
            goal_mask = near_xy & (dpsi_goal <= pp.goal_heading_tol_rad)
        else:
            goal_mask = None

        for p in range(n_prims):
            if blocked[p]:
                continue
            direction = prims.dirs[p]
            hit = -1
            if goal_mask is not None and goal_mask[p].any():
                hit = int(np.argmax(goal_mask[p]))

            end = hit if hit >= 0 else prims.n_sub - 1
            arc = pp.substep_m * (end + 1)
            cost = arc * (1.0
                          + (pp.reverse_penalty_per_m
                             if direction is Direction.REVERSE else 0.0)
                          + pp.steer_penalty_per_m * abs(prims.fracs[p]))
            if node.direction is not None and direction is not node.direction:
                cost += pp.direction_switch_penalty
            g2 = node.g + cost

            ex, ey = float(X[p, end]), float(Y[p, end])
            epsi = normalize_angle(float(PSI[p, end]))

            if hit < 0:
                key2 = bucket(ex, ey, epsi)
                if g2 >= best_g.get(key2, math.inf):
                    continue
                best_g[key2] = g2

            segment = np.stack([X[p, :end + 1], Y[p, :end + 1],
                                PSI[p, :end + 1]], axis=1)
            nodes.append(_Node(ex, ey, epsi, direction, g2, nid, segment))
            if hit >= 0:
                goal_node = len(nodes) - 1
                break
            h2 = _heuristic(ex, ey, epsi, goal, r_min)
            counter += 1
            heapq.heappush(open_heap, (g2 + h2, h2, counter, len(nodes) - 1))
        if goal_node >= 0:
            break

    if goal_node < 0:
        raise NoPathFound(f"open set exhausted after {expansions} expansions")

    # Reconstruct substep poses root-to-goal.
    chain = []
    nid = goal_node
    while nid >= 0:
        chain.append(nid)
        nid = nodes[nid].parent
    chain.reverse()

    poses: list[tuple[float, float, float, Direction]] = []
    first_dir = nodes[chain[1]].direction if len(chain) > 1 else Direction.FORWARD
    poses.append((start[0], start[1], start[2], first_dir))
    total = 0.0
    for nid in chain[1:]:
        node = nodes[nid]
        prev = poses[-1]
        for x, y, psi in node.segment:
            total += math.hypot(x - prev[0], y - prev[1])
            prev = (x, y, psi)
            poses.append((float(x), float(y), normalize_angle(float(psi)),
                          node.direction))
    # Snap the tail onto the exact goal pose (within the goal tolerances,
    # so the jump stays inside the primitive feasibility bound).
    last = poses[-1]
    if (last[0], last[1], last[2]) != (gx, gy, gpsi):
        total += math.hypot(gx - last[0], gy - last[1])
        poses.append((gx, gy, normalize_angle(gpsi), last[3]))
    return PlannedPath(poses=poses, cumulative_length_m=total)
