"""Local-goal extraction and prediction.

The ego vessel tracks a local goal found by walking its global path
backward (from the goal end) until the path enters a look-ahead circle
around the vessel; interpolation along segments puts the goal exactly
on the circle when the path crosses it. Non-communicating vessels get
a constant-velocity goal prediction projected back into free space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import VesselState
from .world import GlobalPath, OccupancyGrid, point_occupied, project_to_free


@dataclass
class GoalParams:
    r_pg: float = 15.0  # [m] ego look-ahead radius
    k_s: float = 0.8    # prediction horizon scale for other agents

    def __post_init__(self):
        if self.r_pg <= 0:
            raise ValueError("GoalParams.r_pg must be positive")
        if not 0.0 < self.k_s <= 2.0:
            raise ValueError("GoalParams.k_s must lie in (0, 2]")


def _closest_point_on_path(waypoints: np.ndarray, position: np.ndarray) -> np.ndarray:
    best = waypoints[0]
    best_d2 = float(np.sum((waypoints[0] - position) ** 2))
    for a, b in zip(waypoints[:-1], waypoints[1:]):
        d = b - a
        t = float(np.dot(position - a, d) / np.dot(d, d))
        t = min(max(t, 0.0), 1.0)
        p = a + t * d
        d2 = float(np.sum((p - position) ** 2))
        if d2 < best_d2:
            best, best_d2 = p, d2
    return best


def ego_local_goal(path: GlobalPath, position, r_pg: float) -> np.ndarray:
    """Latest point on the path within r_pg of the vessel.

    Walks segments from the goal end backward; within each segment the
    largest parameter still inside the look-ahead circle wins. Falls
    back to the closest point on the path when the vessel is farther
    than r_pg from all of it.
    """
    position = np.asarray(position, dtype=float)
    wps = path.waypoints
    if np.linalg.norm(wps[-1] - position) <= r_pg:
        return wps[-1].copy()
    for a, b in zip(wps[-2::-1], wps[:0:-1]):
        # segment a -> b, b is the later point
        d = b - a
        rel = a - position
        aa = float(np.dot(d, d))
        bb = 2.0 * float(np.dot(rel, d))
        cc = float(np.dot(rel, rel)) - r_pg ** 2
        disc = bb * bb - 4 * aa * cc
        if disc < 0:
            continue
        sqrt_disc = np.sqrt(disc)
        s_lo = (-bb - sqrt_disc) / (2 * aa)
        s_hi = (-bb + sqrt_disc) / (2 * aa)
        if s_hi < 0.0 or s_lo > 1.0:
            continue
        s = min(s_hi, 1.0)
        return a + s * d
    return _closest_point_on_path(wps, position)


def predict_local_goal(state: VesselState, horizon_steps: int, dt: float,
                       k_s: float, grid: OccupancyGrid, anchor=None) -> np.ndarray:
    """Constant-velocity goal estimate, projected back into free space."""
    position = state.position
    goal = position + k_s * horizon_steps * dt * state.world_velocity()
    if point_occupied(grid, goal):
        goal = project_to_free(grid, goal, position if anchor is None else np.asarray(anchor, float))
    return goal
