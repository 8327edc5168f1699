import numpy as np
import pytest

from canalmppi.dynamics import VesselState
from canalmppi.goals import GoalParams, ego_local_goal, predict_local_goal
from canalmppi.world import GlobalPath, OccupancyGrid, point_occupied, straight_canal


def test_straight_path_lookahead_intersection():
    path = GlobalPath(np.array([[0.0, 0.0], [100.0, 0.0]]))
    goal = ego_local_goal(path, (0.0, 0.0), 15.0)
    assert np.allclose(goal, [15.0, 0.0])


def test_near_final_waypoint_clamps():
    path = GlobalPath(np.array([[0.0, 0.0], [100.0, 0.0]]))
    goal = ego_local_goal(path, (95.0, 3.0), 15.0)
    assert np.allclose(goal, [100.0, 0.0])


def test_far_off_path_falls_back_to_closest_point():
    path = GlobalPath(np.array([[0.0, 0.0], [100.0, 0.0]]))
    goal = ego_local_goal(path, (30.0, 40.0), 15.0)
    assert np.allclose(goal, [30.0, 0.0])


def test_backward_walk_picks_latest_circle_crossing():
    # path loops around; the last segment pierces the look-ahead circle
    path = GlobalPath(np.array([[0.0, 0.0], [40.0, 0.0], [40.0, 10.0],
                                [0.0, 10.0], [0.0, 30.0]]))
    goal = ego_local_goal(path, (0.0, 0.0), 12.0)
    assert np.allclose(goal, [0.0, 12.0])

    # with the far legs out of reach, interpolation lands on the first leg
    goal = ego_local_goal(path, (20.0, 0.0), 5.0)
    assert np.allclose(goal, [25.0, 0.0])


def test_goal_always_on_polyline_within_radius():
    rng = np.random.default_rng(2)
    pts = np.cumsum(rng.uniform(-4, 6, size=(12, 2)), axis=0)
    path = GlobalPath(pts)
    for _ in range(100):
        pos = rng.uniform(-10, 30, size=2)
        goal = ego_local_goal(path, pos, 8.0)
        # on the polyline: distance to some segment ~ 0
        dmin = min(
            np.linalg.norm(goal - (a + np.clip(np.dot(goal - a, b - a) / np.dot(b - a, b - a), 0, 1) * (b - a)))
            for a, b in zip(pts[:-1], pts[1:])
        )
        assert dmin < 1e-9
        # within radius unless it is the fallback closest point
        d_pos = np.linalg.norm(goal - pos)
        if d_pos > 8.0 + 1e-9:
            closest = min(
                np.linalg.norm(pos - (a + np.clip(np.dot(pos - a, b - a) / np.dot(b - a, b - a), 0, 1) * (b - a)))
                for a, b in zip(pts[:-1], pts[1:])
            )
            assert np.isclose(d_pos, closest)


def test_predict_zero_velocity_stays_put():
    grid = straight_canal(40.0, 10.0, resolution_m=0.5)
    state = VesselState(x=20.0, y=5.0)
    assert np.allclose(predict_local_goal(state, 100, 0.1, 0.8, grid), [20.0, 5.0])


def test_predict_constant_velocity_advance():
    grid = straight_canal(40.0, 10.0, resolution_m=0.5)
    state = VesselState(x=0.0, y=5.0, heading=0.0, surge=1.0)
    goal = predict_local_goal(state, 100, 0.1, 0.8, grid)
    assert np.allclose(goal, [8.0, 5.0])


def test_predict_into_wall_projects_back():
    grid = straight_canal(40.0, 10.0, resolution_m=0.5)
    # heading north at the middle: prediction lands inside the north wall
    state = VesselState(x=20.0, y=5.0, heading=np.pi / 2, surge=1.5)
    goal = predict_local_goal(state, 100, 0.1, 0.8, grid)
    assert not point_occupied(grid, goal)
    assert np.isclose(goal[0], 20.0)
    assert 5.0 < goal[1] < 10.0


def test_predict_equivariant_under_quarter_turn():
    cells = np.zeros((40, 40), dtype=bool)
    cells[:, 30:] = True
    grid = OccupancyGrid(cells=cells, resolution=0.5, origin=(0.0, 0.0))
    # rotate world 90 deg CCW about origin, as in the footprint test
    h = grid.height
    rot = np.zeros_like(cells)
    for iy in range(h):
        for ix in range(grid.width):
            rot[ix, h - 1 - iy] = cells[iy, ix]
    rot_grid = OccupancyGrid(cells=rot, resolution=0.5, origin=(-h * 0.5, 0.0))

    state = VesselState(x=10.0, y=10.0, heading=0.2, surge=1.4, sway=0.2)
    rot_state = VesselState(x=-10.0, y=10.0, heading=0.2 + np.pi / 2, surge=1.4, sway=0.2)
    g = predict_local_goal(state, 100, 0.1, 0.8, grid)
    g_rot = predict_local_goal(rot_state, 100, 0.1, 0.8, rot_grid)
    assert np.allclose(g_rot, [-g[1], g[0]], atol=1e-9)


def test_goal_params_validation():
    with pytest.raises(ValueError):
        GoalParams(r_pg=0.0)
    with pytest.raises(ValueError):
        GoalParams(k_s=2.5)
    with pytest.raises(ValueError):
        GoalParams(k_s=0.0)
