"""Stage costs: agent-centric terms and joint configuration terms.

The agent-centric stage cost of one vessel is

    static collision + rotation + tracking + overspeed + sample term

evaluated at every step of the rollout horizon. The configuration cost
adds, per time step, a collision penalty for every overlapping vessel
pair and the two regulation penalties: failing to give right of way to
a vessel approaching from starboard, and passing an oncoming vessel on
the wrong side. Both regulation checks gate on the other vessel being
on the starboard side within a radius and moving at significant speed.

The two velocity checks are implemented with the signed planar cross
and dot products:

    right of way violated:  cross_z(v_i, v_j) < |v_i| |v_j| sin(-pi/2 + delta)
    head-on:                dot(v_i, v_j)     < |v_i| |v_j| cos(pi - delta)

Read literally with magnitude bars on the left-hand sides these
inequalities could never fire against their negative thresholds; the
signed reading reproduces the intended "approaches from the right" and
"approaches head-on" geometry. A sign switch is provided for worlds
with a mirrored axis convention.

All functions are pure and broadcast over leading batch dimensions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import ControlInput, VesselState
from .world import Footprint, OccupancyGrid, footprint_collides


@dataclass
class CostParams:
    """Weights and thresholds of the stage-cost terms.

    Defaults follow the reference parameterization; the overspeed
    penalty constant is a tuning default (kept well below the collision
    penalty so sustained overspeed does not get samples discarded).
    """

    c_collision: float = 2000.0        # static & dynamic collision penalty
    c_row: float = 100.0               # right-of-way violation penalty
    c_atr: float = 100.0               # avoid-to-right violation penalty
    k_tracking: float = 3.5            # tracking cost scale
    k_rot_slow: float = 3.0            # rotation penalty scale below slow threshold
    k_rot: float = 1.0                 # rotation penalty scale otherwise
    slow_speed_threshold: float = 0.5  # [m/s]
    c_speed: float = 50.0              # overspeed penalty per step
    gamma: float = 0.001               # sample-cost scale
    delta: float = 1.0                 # [rad] angular margin of the velocity checks
    regulation_radius: float = 8.0     # [m]
    significant_speed: float = 0.5     # [m/s]
    flip_cross: bool = False           # mirrored cross-product convention

    def __post_init__(self):
        for name in ("c_collision", "c_row", "c_atr", "k_tracking", "k_rot_slow",
                     "k_rot", "c_speed"):
            if getattr(self, name) < 0:
                raise ValueError(f"CostParams.{name} must be non-negative")
        if not 0.0 < self.delta < math.pi / 2:
            raise ValueError("CostParams.delta must lie in (0, pi/2)")
        if self.regulation_radius <= 0:
            raise ValueError("CostParams.regulation_radius must be positive")

    @property
    def cross_sign(self) -> float:
        return -1.0 if self.flip_cross else 1.0


def tracking_cost(p_t, p_goal, p_start, k_tracking: float):
    """k * |goal - p| / |goal - start|; zero when the start is the goal."""
    p_t = np.asarray(p_t, dtype=float)
    p_goal = np.asarray(p_goal, dtype=float)
    p_start = np.asarray(p_start, dtype=float)
    denom = np.linalg.norm(p_goal - p_start, axis=-1)
    num = np.linalg.norm(p_goal - p_t, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        cost = np.where(denom > 0.0, k_tracking * num / np.where(denom > 0, denom, 1.0), 0.0)
    return cost if cost.ndim else float(cost)


def sample_cost(u_t, eps_t, sigma_diag, gamma: float):
    """0.5 * gamma * (u^T S^-1 u + 2 u^T S^-1 eps) with S = diag(sigma)."""
    u_t = np.asarray(u_t, dtype=float)
    eps_t = np.asarray(eps_t, dtype=float)
    inv = 1.0 / np.asarray(sigma_diag, dtype=float)
    quad = np.sum(u_t * inv * u_t, axis=-1)
    cross = np.sum(u_t * inv * eps_t, axis=-1)
    cost = 0.5 * gamma * (quad + 2.0 * cross)
    return cost if np.ndim(cost) else float(cost)


def rotation_cost(speed, yaw_rate, params: CostParams):
    """Linear rotation penalty, steeper below the slow-speed threshold."""
    scale = np.where(np.asarray(speed) < params.slow_speed_threshold,
                     params.k_rot_slow, params.k_rot)
    cost = scale * np.abs(yaw_rate)
    return cost if np.ndim(cost) else float(cost)


def agent_stage_cost(state: VesselState, inp: ControlInput, noise, goal, start_pos,
                     grid: OccupancyGrid, fp: Footprint, params: CostParams,
                     sigma_diag, v_max: float) -> float:
    """Single-step agent-centric cost (the per-sample rollout accumulates this)."""
    cost = 0.0
    if footprint_collides(grid, (state.x, state.y, state.heading), fp):
        cost += params.c_collision
    speed = state.speed
    cost += rotation_cost(speed, state.yaw_rate, params)
    cost += tracking_cost(state.position, goal, start_pos, params.k_tracking)
    if speed > v_max:
        cost += params.c_speed
    cost += sample_cost(inp.as_array(), noise, sigma_diag, params.gamma)
    return float(cost)


# ---------------------------------------------------------------------------
# regulation predicates

def cross_z(ax, ay, bx, by):
    return ax * by - ay * bx


def starboard_within_region(ego_pose, other_pos, other_speed, params: CostParams) -> bool:
    """Other vessel strictly on the starboard side, close, and actually moving."""
    ex, ey, heading = ego_pose
    rx = other_pos[0] - ex
    ry = other_pos[1] - ey
    if rx * rx + ry * ry > params.regulation_radius ** 2:
        return False
    if other_speed <= params.significant_speed:
        return False
    side = params.cross_sign * cross_z(math.cos(heading), math.sin(heading), rx, ry)
    return side < 0.0


def row_velocity_check(v_i, v_j, delta: float, cross_sign: float = 1.0) -> bool:
    """True when the other velocity crosses the ego velocity from the right."""
    vix, viy = float(v_i[0]), float(v_i[1])
    vjx, vjy = float(v_j[0]), float(v_j[1])
    lhs = cross_sign * cross_z(vix, viy, vjx, vjy)
    rhs = math.hypot(vix, viy) * math.hypot(vjx, vjy) * math.sin(-math.pi / 2 + delta)
    return lhs < rhs


def headon_velocity_check(v_i, v_j, delta: float) -> bool:
    """True when the two velocities point at each other within the margin."""
    vix, viy = float(v_i[0]), float(v_i[1])
    vjx, vjy = float(v_j[0]), float(v_j[1])
    lhs = vix * vjx + viy * vjy
    rhs = math.hypot(vix, viy) * math.hypot(vjx, vjy) * math.cos(math.pi - delta)
    return lhs < rhs


# ---------------------------------------------------------------------------
# vessel-vessel overlap (separating axis test on oriented rectangles)

def rects_overlap_batch(x1, y1, c1, s1, len1, wid1,
                        x2, y2, c2, s2, len2, wid2) -> np.ndarray:
    """Vectorized overlap test between two oriented rectangles."""
    dx = np.asarray(x2) - np.asarray(x1)
    dy = np.asarray(y2) - np.asarray(y1)
    overlap = np.ones(np.broadcast(dx, dy).shape, dtype=bool)
    hl1, hw1 = len1 / 2.0, wid1 / 2.0
    hl2, hw2 = len2 / 2.0, wid2 / 2.0
    axes = ((c1, s1), (-s1, c1), (c2, s2), (-s2, c2))
    for ux, uy in axes:
        r1 = np.abs(c1 * ux + s1 * uy) * hl1 + np.abs(-s1 * ux + c1 * uy) * hw1
        r2 = np.abs(c2 * ux + s2 * uy) * hl2 + np.abs(-s2 * ux + c2 * uy) * hw2
        overlap &= np.abs(dx * ux + dy * uy) <= r1 + r2
    return overlap


def vessels_overlap(pose_a, fp_a: Footprint, pose_b, fp_b: Footprint) -> bool:
    xa, ya, ha = pose_a
    xb, yb, hb = pose_b
    return bool(rects_overlap_batch(
        xa, ya, math.cos(ha), math.sin(ha), fp_a.length, fp_a.width,
        xb, yb, math.cos(hb), math.sin(hb), fp_b.length, fp_b.width,
    ))


def configuration_stage_cost(states, footprints, params: CostParams) -> float:
    """Joint cost of one time step: pair collisions plus regulation penalties."""
    n = len(states)
    poses = [(s.x, s.y, s.heading) for s in states]
    vels = [s.world_velocity() for s in states]
    speeds = [s.speed for s in states]
    total = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            if vessels_overlap(poses[i], footprints[i], poses[j], footprints[j]):
                total += params.c_collision
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            if not starboard_within_region(poses[i], poses[j][:2], speeds[j], params):
                continue
            if row_velocity_check(vels[i], vels[j], params.delta, params.cross_sign):
                total += params.c_row
            if headon_velocity_check(vels[i], vels[j], params.delta):
                total += params.c_atr
    return total
