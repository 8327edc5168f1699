"""Sampling-based planner core: noise, rollouts, two-stage evaluation, update.

Each plan call perturbs a nominal input sequence per agent with
Gaussian noise, rolls the vessel model forward for every sample,
discards per-agent samples whose accumulated agent-centric cost
exceeds the collision penalty (they contain a static collision), and
recombines the surviving samples uniformly into full system samples.
System samples are scored with the summed agent costs plus the joint
configuration cost, converted to importance weights

    w_k = exp(-(S_k - S_min) / lambda) / eta,

and averaged into the control update U* = U + sum_k w_k eps_k.

Determinism: every random stream is derived from (seed, call counter,
agent key), never from thread scheduling, so results are bitwise
reproducible for any worker count. Agents further apart than the
interaction radius cannot incur joint costs within a horizon and are
planned as independent groups; inside a group the evaluation is
exactly the joint algorithm.

The hot loops are compiled with numba when available (worker threads
then run truly in parallel, rows split between them); a pure-numpy
fallback implements the identical arithmetic.
"""

from __future__ import annotations

import hashlib
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .costs import CostParams, rects_overlap_batch
from .dynamics import ControlInput, VesselParams, VesselState, wrap_angle
from .world import Footprint, OccupancyGrid, _lattice_offsets, footprints_collide_batch

try:
    from numba import njit

    _HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is an optional speedup
    _HAS_NUMBA = False

    def njit(*args, **kwargs):
        def deco(fn):
            return fn
        if len(args) == 1 and callable(args[0]):
            return args[0]
        return deco

_NOISE_TAG = 0
_RECOMBINE_TAG = 1


@dataclass
class PlannerParams:
    """Sampling configuration of the planner."""

    samples: int = 2000          # K
    horizon: int = 100           # T [steps]
    dt: float = 0.1              # [s]
    lambda_temp: float = 15.0    # inverse temperature
    nu: float = 12.0             # exploration variance scale
    sigma_diag: tuple = (150.0, 150.0, 6.0, 6.0)  # per-channel input variance [N^2]
    seed: int = 0
    safety_margin_m: float = 0.7  # hull inflation inside rollouts only
    interaction_radius_m: float | None = None  # None: 2 x regulation radius
    other_noise_scale: float = 0.3  # noise damping for non-ego agents

    def __post_init__(self):
        if self.samples < 1:
            raise ValueError("samples must be at least 1")
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.lambda_temp <= 0:
            raise ValueError("lambda_temp must be positive")
        if self.nu < 1:
            raise ValueError("nu must be >= 1")
        if self.safety_margin_m < 0:
            raise ValueError("safety_margin_m must be non-negative")
        if self.interaction_radius_m is not None and self.interaction_radius_m <= 0:
            raise ValueError("interaction_radius_m must be positive when set")
        if not 0.0 < self.other_noise_scale <= 1.0:
            raise ValueError("other_noise_scale must lie in (0, 1]")
        self.sigma_diag = tuple(float(s) for s in self.sigma_diag)
        if len(self.sigma_diag) != 4 or any(s <= 0 for s in self.sigma_diag):
            raise ValueError("sigma_diag needs 4 positive entries")


@dataclass
class RolloutBatch:
    """Per-agent sampled noise, inputs, trajectories and costs."""

    agent_ids: list
    noise: np.ndarray          # (A, K, T, 4)
    inputs: np.ndarray         # (A, K, T, 4) perturbed, clamped
    trajectories: np.ndarray   # (A, K, T, 10): x,y,h,surge,sway,yaw_rate,cos,sin,vx,vy
    costs: np.ndarray          # (A, K)
    valid: np.ndarray          # (A, K) bool, cost <= collision penalty

    def states(self, agent: int, sample: int) -> np.ndarray:
        """Standard (T, 6) state trajectory of one sample."""
        return self.trajectories[agent, sample, :, :6]


@dataclass
class PlanDiagnostics:
    min_cost: dict = field(default_factory=dict)        # per agent: group min system cost
    ess: dict = field(default_factory=dict)             # effective sample size per agent
    valid_counts: dict = field(default_factory=dict)
    fallback: dict = field(default_factory=dict)        # empty valid set -> pool engaged
    groups: list = field(default_factory=list)
    wall_time_s: float = 0.0


@dataclass
class PlanResult:
    ego_command: ControlInput | None
    sequences: dict            # agent id -> (T, 4) updated input sequence
    trajectories: dict         # agent id -> (T, 6) planned states under U*
    diagnostics: PlanDiagnostics


def agent_key(agent_id) -> int:
    """Stable 32-bit key for RNG stream derivation."""
    digest = hashlib.sha256(str(agent_id).encode()).digest()
    return int.from_bytes(digest[:4], "big")


def _stream(seed: int, *key) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=tuple(key)))


def noise_scale(params: PlannerParams) -> np.ndarray:
    return np.sqrt(params.nu * np.asarray(params.sigma_diag))


def sample_noise(params: PlannerParams, n_agents: int, seed: int) -> np.ndarray:
    """Zero-mean Gaussian noise (agents, K, T, 4) with variance nu * sigma."""
    out = np.empty((n_agents, params.samples, params.horizon, 4))
    for j in range(n_agents):
        rng = _stream(seed, _NOISE_TAG, j)
        rng.standard_normal(out=out[j])
    out *= noise_scale(params)
    return out


# ---------------------------------------------------------------------------
# rollout kernels: numba-compiled scalar loop and the numpy reference

@njit(nogil=True, cache=True)
def _rollout_kernel(r0, r1, k_samples, q0, inputs, goals, track_factor, v_max_rows,
                    m11, m22, m33, drag_u, drag_v, drag_r, lever_a, lever_b,
                    cells, clearance, res, ox, oy,
                    lat_x, lat_y, lat_n, half_wid, circum_r,
                    k_rot_slow, k_rot, slow_thr, c_speed, c_coll,
                    dt, horizon, traj, costs):  # pragma: no cover - exercised via rollout_group
    height, width = cells.shape
    x_min = ox
    x_max = ox + width * res
    y_min = oy
    y_max = oy + height * res
    diag = res * math.sqrt(2.0)
    two_pi = 2.0 * math.pi

    for i in range(r0, r1):
        a = i // k_samples
        free_thr = circum_r[a] + diag + 1e-9
        edge_thr = circum_r[a] + 1e-9
        hit_thr = half_wid[a] - 0.75 * diag - 1e-9
        n_lat = lat_n[a]
        a_u = dt / m11[i]
        a_v = dt / m22[i]
        a_r = dt / m33[i]

        x = q0[i, 0]
        y = q0[i, 1]
        h = q0[i, 2]
        su = q0[i, 3]
        sw = q0[i, 4]
        yr = q0[i, 5]
        c = math.cos(h)
        s = math.sin(h)
        vx = c * su - s * sw
        vy = s * su + c * sw
        gx = goals[i, 0]
        gy = goals[i, 1]
        tf = track_factor[i]
        vm = v_max_rows[i]
        total = 0.0

        for t in range(horizon):
            u0 = inputs[i, t, 0]
            u1 = inputs[i, t, 1]
            u2 = inputs[i, t, 2]
            u3 = inputs[i, t, 3]
            x = x + dt * vx
            y = y + dt * vy
            h = (h + dt * yr + math.pi) % two_pi - math.pi
            if h <= -math.pi:
                h += two_pi
            su = su + a_u * (u0 + u1 - drag_u[i] * su)
            sw = sw + a_v * (u2 + u3 - drag_v[i] * sw)
            yr = yr + a_r * (0.5 * lever_a[i] * (u0 - u1)
                             + 0.5 * lever_b[i] * (u2 - u3) - drag_r[i] * yr)
            c = math.cos(h)
            s = math.sin(h)
            vx = c * su - s * sw
            vy = s * su + c * sw

            speed = math.hypot(su, sw)
            step = tf * math.hypot(gx - x, gy - y)
            if speed < slow_thr:
                step += k_rot_slow * abs(yr)
            else:
                step += k_rot * abs(yr)
            if speed > vm:
                step += c_speed

            hit = False
            if x < x_min or x >= x_max or y < y_min or y >= y_max:
                hit = True
            else:
                ix = int(math.floor((x - ox) / res))
                iy = int(math.floor((y - oy) / res))
                clear = clearance[iy, ix]
                edge = min(min(x - x_min, x_max - x), min(y - y_min, y_max - y))
                if clear > free_thr and edge > edge_thr:
                    hit = False
                elif clear < hit_thr:
                    hit = True
                else:
                    for p in range(n_lat):
                        px = x + c * lat_x[a, p] - s * lat_y[a, p]
                        py = y + s * lat_x[a, p] + c * lat_y[a, p]
                        jx = int(math.floor((px - ox) / res))
                        jy = int(math.floor((py - oy) / res))
                        if jx < 0 or jx >= width or jy < 0 or jy >= height or cells[jy, jx]:
                            hit = True
                            break
            if hit:
                step += c_coll
            total += step

            traj[i, t, 0] = x
            traj[i, t, 1] = y
            traj[i, t, 2] = h
            traj[i, t, 3] = su
            traj[i, t, 4] = sw
            traj[i, t, 5] = yr
            traj[i, t, 6] = c
            traj[i, t, 7] = s
            traj[i, t, 8] = vx
            traj[i, t, 9] = vy
        costs[i] = total


def _rollout_rows_numpy(row0, row1, q0, inputs, traj, costs, goals, track_factor,
                        v_max_rows, fp_blocks, grid, cost_params, dt, horizon):
    """Vectorized reference implementation over rows [row0, row1)."""
    x = q0[row0:row1, 0].copy()
    y = q0[row0:row1, 1].copy()
    h = q0[row0:row1, 2].copy()
    su = q0[row0:row1, 3].copy()
    sw = q0[row0:row1, 4].copy()
    yr = q0[row0:row1, 5].copy()
    c = np.cos(h)
    s = np.sin(h)
    vx = c * su - s * sw
    vy = s * su + c * sw

    gx = goals[row0:row1, 0]
    gy = goals[row0:row1, 1]
    tf = track_factor[row0:row1]
    vmax = v_max_rows[row0:row1]
    u = inputs[row0:row1]
    out = traj[row0:row1]
    cost = costs[row0:row1]

    blocks = [(max(b0, row0) - row0, min(b1, row1) - row0, fp, vp)
              for b0, b1, fp, vp in fp_blocks if b0 < row1 and b1 > row0]
    if len(blocks) > 1 and all(b[2] == blocks[0][2] and b[3] == blocks[0][3]
                               for b in blocks[1:]):
        blocks = [(0, row1 - row0, blocks[0][2], blocks[0][3])]

    for t in range(horizon):
        ut = u[:, t, :]
        x = x + dt * vx
        y = y + dt * vy
        h = wrap_angle(h + dt * yr)
        for b0, b1, fp, vp in blocks:
            su[b0:b1] += (dt / vp.mass_surge) * (
                ut[b0:b1, 0] + ut[b0:b1, 1] - vp.drag_surge * su[b0:b1])
            sw[b0:b1] += (dt / vp.mass_sway) * (
                ut[b0:b1, 2] + ut[b0:b1, 3] - vp.drag_sway * sw[b0:b1])
            yr[b0:b1] += (dt / vp.inertia_yaw) * (
                0.5 * vp.lever_longitudinal * (ut[b0:b1, 0] - ut[b0:b1, 1])
                + 0.5 * vp.lever_lateral * (ut[b0:b1, 2] - ut[b0:b1, 3])
                - vp.drag_yaw * yr[b0:b1])
        c = np.cos(h)
        s = np.sin(h)
        vx = c * su - s * sw
        vy = s * su + c * sw

        speed = np.hypot(su, sw)
        step_cost = tf * np.hypot(gx - x, gy - y)
        step_cost += np.where(speed < cost_params.slow_speed_threshold,
                              cost_params.k_rot_slow, cost_params.k_rot) * np.abs(yr)
        step_cost += np.where(speed > vmax, cost_params.c_speed, 0.0)
        for b0, b1, fp, _ in blocks:
            hit = footprints_collide_batch(grid, x[b0:b1], y[b0:b1], None, fp,
                                           cos_h=c[b0:b1], sin_h=s[b0:b1])
            step_cost[b0:b1] += np.where(hit, cost_params.c_collision, 0.0)
        cost += step_cost

        out[:, t, 0] = x
        out[:, t, 1] = y
        out[:, t, 2] = h
        out[:, t, 3] = su
        out[:, t, 4] = sw
        out[:, t, 5] = yr
        out[:, t, 6] = c
        out[:, t, 7] = s
        out[:, t, 8] = vx
        out[:, t, 9] = vy


def rollout_group(states, nominals, noises, goals, grid, footprints, vessel_params,
                  cost_params: CostParams, planner_params: PlannerParams,
                  pool: ThreadPoolExecutor | None = None, workers: int = 1,
                  use_numba: bool | None = None):
    """Simulate all samples of a group of agents.

    states: (A, 6); nominals: (A, T, 4); noises: (A, K, T, 4);
    goals: (A, 2). Returns (trajectories (A, K, T, 10), costs (A, K),
    clamped inputs (A, K, T, 4)).
    """
    n_agents, k_samples, horizon, _ = noises.shape
    n = n_agents * k_samples
    sigma = np.asarray(planner_params.sigma_diag)
    dt = planner_params.dt
    if use_numba is None:
        use_numba = _HAS_NUMBA

    f_max = np.array([vp.f_max for vp in vessel_params])
    inputs = nominals[:, None, :, :] + noises
    np.clip(inputs, -f_max[:, None, None, None], f_max[:, None, None, None], out=inputs)
    inputs = inputs.reshape(n, horizon, 4)

    q0 = np.repeat(np.asarray(states, dtype=float), k_samples, axis=0)
    goal_rows = np.repeat(np.asarray(goals, dtype=float), k_samples, axis=0)
    denom = np.linalg.norm(np.asarray(goals, float) - np.asarray(states, float)[:, :2], axis=1)
    factor = np.where(denom > 0.0, cost_params.k_tracking / np.where(denom > 0, denom, 1.0), 0.0)
    track_factor = np.repeat(factor, k_samples)
    v_max_rows = np.repeat(np.array([vp.v_max for vp in vessel_params]), k_samples)

    traj = np.empty((n, horizon, 10))
    costs = np.zeros(n)
    clearance = grid.clearance_map()  # materialize before fanning out

    if use_numba:
        per_agent = lambda attr: np.repeat(np.array([getattr(vp, attr)  # noqa: E731
                                                     for vp in vessel_params]), k_samples)
        m11, m22, m33 = (per_agent(a) for a in ("mass_surge", "mass_sway", "inertia_yaw"))
        dr_u, dr_v, dr_r = (per_agent(a) for a in ("drag_surge", "drag_sway", "drag_yaw"))
        lev_a, lev_b = per_agent("lever_longitudinal"), per_agent("lever_lateral")
        lattices = [_lattice_offsets(fp, grid.resolution) for fp in footprints]
        p_max = max(lx.size for lx, _ in lattices)
        lat_x = np.zeros((n_agents, p_max))
        lat_y = np.zeros((n_agents, p_max))
        lat_n = np.array([lx.size for lx, _ in lattices], dtype=np.int64)
        for j, (lx, ly) in enumerate(lattices):
            lat_x[j, :lx.size] = lx
            lat_y[j, :ly.size] = ly
        half_wid = np.array([fp.width / 2.0 for fp in footprints])
        circum_r = np.array([fp.circumradius for fp in footprints])

        def run(r0, r1):
            _rollout_kernel(r0, r1, k_samples, q0, inputs, goal_rows, track_factor,
                            v_max_rows, m11, m22, m33, dr_u, dr_v, dr_r, lev_a, lev_b,
                            grid.cells, clearance, grid.resolution,
                            grid.origin[0], grid.origin[1],
                            lat_x, lat_y, lat_n, half_wid, circum_r,
                            cost_params.k_rot_slow, cost_params.k_rot,
                            cost_params.slow_speed_threshold, cost_params.c_speed,
                            cost_params.c_collision, dt, horizon, traj, costs)
    else:
        fp_blocks = [(j * k_samples, (j + 1) * k_samples, footprints[j], vessel_params[j])
                     for j in range(n_agents)]

        def run(r0, r1):
            _rollout_rows_numpy(r0, r1, q0, inputs, traj, costs, goal_rows,
                                track_factor, v_max_rows, fp_blocks, grid,
                                cost_params, dt, horizon)

    if pool is None or workers <= 1 or n < 2:
        run(0, n)
    else:
        bounds = np.linspace(0, n, min(workers, n) + 1).astype(int)
        futures = [pool.submit(run, int(r0), int(r1))
                   for r0, r1 in zip(bounds[:-1], bounds[1:]) if r1 > r0]
        for f in futures:
            f.result()

    # control-effort sample cost, summed over the horizon in one shot
    inv = 1.0 / sigma
    quad = 0.5 * cost_params.gamma * np.einsum("ati,i,ati->a", nominals, inv, nominals)
    weighted_nominal = (nominals * inv).reshape(n_agents, horizon * 4, 1)
    cross = cost_params.gamma * (
        noises.reshape(n_agents, k_samples, horizon * 4) @ weighted_nominal)[..., 0]
    costs = costs.reshape(n_agents, k_samples) + quad[:, None] + cross

    return traj.reshape(n_agents, k_samples, horizon, 10), costs, \
        inputs.reshape(n_agents, k_samples, horizon, 4)


def rollout_agent(state: VesselState, nominal, noise, goal, grid: OccupancyGrid,
                  fp: Footprint, cost_params: CostParams,
                  planner_params: PlannerParams,
                  vessel: VesselParams | None = None,
                  use_numba: bool | None = None):
    """Trajectories and agent-centric costs for one agent's noise samples.

    noise may be a single (T, 4) sequence or a batch (K, T, 4); the
    returned trajectory has matching leading shape with (T, 6) states.
    """
    vessel = vessel or VesselParams()
    noise = np.asarray(noise, dtype=float)
    single = noise.ndim == 2
    if single:
        noise = noise[None]
    traj, costs, _ = rollout_group(
        state.as_array()[None], np.asarray(nominal, float)[None], noise[None],
        np.asarray(goal, float)[None], grid, [fp], [vessel],
        cost_params, planner_params, use_numba=use_numba)
    states = traj[0, :, :, :6]
    if single:
        return states[0], float(costs[0, 0])
    return states, costs[0]


def filter_colliding(costs: np.ndarray, c_collision: float):
    """Valid sample index sets per agent: total cost <= collision penalty."""
    costs = np.atleast_2d(costs)
    return [np.flatnonzero(row <= c_collision) for row in costs]


def recombine(valid_sets, k_samples: int, rng: np.random.Generator,
              costs=None, fallback_fraction: float = 0.05):
    """Uniformly draw per-agent sample indices to build K system samples.

    Agents whose valid set is empty fall back to their ceil(K *
    fallback_fraction) lowest-cost samples (costs required then).
    Returns (indices (A, K), fallback flags (A,)).
    """
    n_agents = len(valid_sets)
    indices = np.empty((n_agents, k_samples), dtype=np.int64)
    fallback = np.zeros(n_agents, dtype=bool)
    for j, valid in enumerate(valid_sets):
        pool = np.asarray(valid, dtype=np.int64)
        if pool.size == 0:
            if costs is None:
                raise ValueError("empty valid set requires costs for the fallback pool")
            n_pool = max(1, math.ceil(k_samples * fallback_fraction))
            pool = np.argsort(costs[j], kind="stable")[:n_pool].astype(np.int64)
            fallback[j] = True
        indices[j] = pool[rng.integers(0, pool.size, size=k_samples)]
    return indices, fallback


# ---------------------------------------------------------------------------
# system-sample costs

@njit(nogil=True, cache=True)
def _config_kernel(traj, indices, half_len, half_wid, circum_r,
                   reg_r, sig_speed, sin_m, cos_m, csign,
                   c_coll, c_row, c_atr, out):  # pragma: no cover - exercised via system_costs
    n_agents, k_samples = indices.shape
    horizon = traj.shape[2]
    for k in range(k_samples):
        total = 0.0
        for t in range(horizon):
            for i in range(n_agents):
                ki = indices[i, k]
                xi = traj[i, ki, t, 0]
                yi = traj[i, ki, t, 1]
                for j in range(i + 1, n_agents):
                    kj = indices[j, k]
                    xj = traj[j, kj, t, 0]
                    yj = traj[j, kj, t, 1]
                    dx = xj - xi
                    dy = yj - yi
                    d2 = dx * dx + dy * dy
                    reach = circum_r[i] + circum_r[j]
                    if d2 <= reach * reach:
                        ci = traj[i, ki, t, 6]
                        si = traj[i, ki, t, 7]
                        cj = traj[j, kj, t, 6]
                        sj = traj[j, kj, t, 7]
                        overlap = True
                        for axis in range(4):
                            if axis == 0:
                                ux, uy = ci, si
                            elif axis == 1:
                                ux, uy = -si, ci
                            elif axis == 2:
                                ux, uy = cj, sj
                            else:
                                ux, uy = -sj, cj
                            r1 = abs(ci * ux + si * uy) * half_len[i] \
                                + abs(-si * ux + ci * uy) * half_wid[i]
                            r2 = abs(cj * ux + sj * uy) * half_len[j] \
                                + abs(-sj * ux + cj * uy) * half_wid[j]
                            if abs(dx * ux + dy * uy) > r1 + r2:
                                overlap = False
                                break
                        if overlap:
                            total += c_coll
                    if d2 <= reg_r * reg_r:
                        vxi = traj[i, ki, t, 8]
                        vyi = traj[i, ki, t, 9]
                        vxj = traj[j, kj, t, 8]
                        vyj = traj[j, kj, t, 9]
                        sp_i = math.hypot(vxi, vyi)
                        sp_j = math.hypot(vxj, vyj)
                        # i gives way / avoids to the right w.r.t. j
                        ci = traj[i, ki, t, 6]
                        si = traj[i, ki, t, 7]
                        if sp_j > sig_speed and csign * (ci * dy - si * dx) < 0.0:
                            norm = sp_i * sp_j
                            if csign * (vxi * vyj - vyi * vxj) < norm * sin_m:
                                total += c_row
                            if vxi * vxj + vyi * vyj < norm * cos_m:
                                total += c_atr
                        cj = traj[j, kj, t, 6]
                        sj = traj[j, kj, t, 7]
                        if sp_i > sig_speed and csign * (cj * -dy - sj * -dx) < 0.0:
                            norm = sp_j * sp_i
                            if csign * (vxj * vyi - vyj * vxi) < norm * sin_m:
                                total += c_row
                            if vxj * vxi + vyj * vyi < norm * cos_m:
                                total += c_atr
        out[k] = total


def _system_costs_numpy(indices, batch_traj, footprints, cost_params):
    n_agents, k_samples = indices.shape
    total = np.zeros(k_samples)
    sel = [batch_traj[j][indices[j]] for j in range(n_agents)]  # (K, T, 10) each
    r = cost_params.regulation_radius
    sig = cost_params.significant_speed
    sin_m = math.sin(-math.pi / 2 + cost_params.delta)
    cos_m = math.cos(math.pi - cost_params.delta)
    csign = cost_params.cross_sign

    for i in range(n_agents):
        for j in range(i + 1, n_agents):
            a, b = sel[i], sel[j]
            dx = b[..., 0] - a[..., 0]
            dy = b[..., 1] - a[..., 1]
            d2 = dx * dx + dy * dy
            fpi, fpj = footprints[i], footprints[j]

            reach = fpi.circumradius + fpj.circumradius
            near = d2 <= reach * reach
            if near.any():
                overlap = rects_overlap_batch(
                    a[..., 0][near], a[..., 1][near], a[..., 6][near], a[..., 7][near],
                    fpi.length, fpi.width,
                    b[..., 0][near], b[..., 1][near], b[..., 6][near], b[..., 7][near],
                    fpj.length, fpj.width)
                hits = np.zeros_like(near, dtype=float)
                hits[near] = overlap * cost_params.c_collision
                total += hits.sum(axis=1)

            in_region = d2 <= r * r
            if not in_region.any():
                continue
            svx_a, svy_a = a[..., 8][in_region], a[..., 9][in_region]
            svx_b, svy_b = b[..., 8][in_region], b[..., 9][in_region]
            sp_a = np.hypot(svx_a, svy_a)
            sp_b = np.hypot(svx_b, svy_b)
            dxr, dyr = dx[in_region], dy[in_region]

            penalties = np.zeros(dxr.shape)
            for (ch, sh, vx_i, vy_i, vx_j, vy_j, sp_i, sp_j, rx, ry) in (
                (a[..., 6][in_region], a[..., 7][in_region], svx_a, svy_a,
                 svx_b, svy_b, sp_a, sp_b, dxr, dyr),
                (b[..., 6][in_region], b[..., 7][in_region], svx_b, svy_b,
                 svx_a, svy_a, sp_b, sp_a, -dxr, -dyr),
            ):
                starboard = (csign * (ch * ry - sh * rx) < 0.0) & (sp_j > sig)
                if not starboard.any():
                    continue
                norm = sp_i * sp_j
                row = csign * (vx_i * vy_j - vy_i * vx_j) < norm * sin_m
                headon = vx_i * vx_j + vy_i * vy_j < norm * cos_m
                penalties += starboard * (row * cost_params.c_row
                                          + headon * cost_params.c_atr)
            reg = np.zeros_like(near, dtype=float)
            reg[in_region] = penalties
            total += reg.sum(axis=1)
    return total


def system_costs(indices: np.ndarray, batch_traj: np.ndarray, batch_costs: np.ndarray,
                 footprints, cost_params: CostParams,
                 use_numba: bool | None = None) -> np.ndarray:
    """Total cost of each recombined system sample.

    indices: (A, K) recombination; batch_traj: (A, K0, T, 10) rollout
    trajectories; batch_costs: (A, K0) agent costs. Adds the per-step
    configuration cost over the selected joint trajectories.
    """
    indices = np.asarray(indices, dtype=np.int64)
    n_agents, k_samples = indices.shape
    total = np.zeros(k_samples)
    for j in range(n_agents):
        total += batch_costs[j, indices[j]]
    if n_agents == 1:
        return total
    if use_numba is None:
        use_numba = _HAS_NUMBA

    if use_numba:
        config = np.zeros(k_samples)
        _config_kernel(
            np.ascontiguousarray(batch_traj), indices,
            np.array([fp.length / 2.0 for fp in footprints]),
            np.array([fp.width / 2.0 for fp in footprints]),
            np.array([fp.circumradius for fp in footprints]),
            cost_params.regulation_radius, cost_params.significant_speed,
            math.sin(-math.pi / 2 + cost_params.delta),
            math.cos(math.pi - cost_params.delta), cost_params.cross_sign,
            cost_params.c_collision, cost_params.c_row, cost_params.c_atr, config)
        return total + config
    return total + _system_costs_numpy(indices, batch_traj, footprints, cost_params)


def importance_weights(costs, lambda_temp: float) -> np.ndarray:
    """Normalized exponential weights over sample costs."""
    costs = np.asarray(costs, dtype=float)
    shifted = costs - costs.min()
    w = np.exp(-shifted / lambda_temp)
    return w / w.sum()


def update_control(nominal, weights, noises, f_max: float | None = None) -> np.ndarray:
    """U* = U + sum_k w_k eps_k, optionally clamped to thruster bounds.

    noises are the recombined per-sample noise sequences (K, T, 4) for
    one agent or (A, K, T, 4) stacked.
    """
    nominal = np.asarray(nominal, dtype=float)
    noises = np.asarray(noises, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if noises.ndim == 3:
        update = np.einsum("k,kti->ti", weights, noises)
    else:
        update = np.einsum("k,akti->ati", weights, noises)
    out = nominal + update
    if f_max is not None:
        out = np.clip(out, -f_max, f_max)
    return out


def shift_hotstart(sequence) -> np.ndarray:
    """Drop the first input and repeat the last one."""
    sequence = np.asarray(sequence, dtype=float)
    return np.concatenate([sequence[..., 1:, :], sequence[..., -1:, :]], axis=-2)


class MppiPlanner:
    """Stateful planner owning hot starts and RNG stream bookkeeping.

    One instance belongs to one deciding agent (or to the central
    controller planning for everyone). Instances are not thread-safe;
    internally, rollouts fan out over `workers` threads with results
    independent of the worker count.
    """

    def __init__(self, grid: OccupancyGrid, planner_params: PlannerParams,
                 cost_params: CostParams, vessels: dict,
                 workers: int = 1, interaction_radius: float | None = None):
        self.grid = grid
        self.params = planner_params
        self.cost_params = cost_params
        self.vessels = dict(vessels)
        # rollouts plan against slightly inflated hulls; executed-state
        # metrics elsewhere keep the exact footprints
        margin = planner_params.safety_margin_m
        self.footprints = {aid: Footprint(vp.length + margin, vp.width + margin)
                           for aid, vp in self.vessels.items()}
        self.workers = max(1, int(workers))
        if interaction_radius is None:
            interaction_radius = planner_params.interaction_radius_m
        self.interaction_radius = (2.0 * cost_params.regulation_radius
                                   if interaction_radius is None else interaction_radius)
        self.hotstarts: dict = {}
        self.call_index = 0
        self._pool = ThreadPoolExecutor(max_workers=self.workers) if self.workers > 1 else None

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def _interaction_groups(self, ids, states):
        pos = {aid: np.array([states[aid].x, states[aid].y]) for aid in ids}
        r2 = self.interaction_radius ** 2
        remaining = list(ids)
        groups = []
        while remaining:
            seed_id = remaining.pop(0)
            group = [seed_id]
            frontier = [seed_id]
            while frontier:
                cur = frontier.pop()
                linked = [o for o in remaining
                          if np.sum((pos[cur] - pos[o]) ** 2) <= r2]
                for o in linked:
                    remaining.remove(o)
                    group.append(o)
                    frontier.append(o)
            groups.append(sorted(group, key=str))
        return groups

    def _plan_group(self, group, states, goals, diag: PlanDiagnostics, ego_id=None):
        params = self.params
        k_samples, horizon = params.samples, params.horizon
        vessels = [self.vessels[aid] for aid in group]
        fps = [self.footprints[aid] for aid in group]
        q0 = np.stack([states[aid].as_array() for aid in group])
        goal_arr = np.stack([np.asarray(goals[aid], dtype=float) for aid in group])

        nominals = np.stack([
            shift_hotstart(self.hotstarts[aid]) if aid in self.hotstarts
            else np.zeros((horizon, 4))
            for aid in group
        ])

        scale = noise_scale(params)
        noises = np.empty((len(group), k_samples, horizon, 4))
        for j, aid in enumerate(group):
            rng = _stream(params.seed, self.call_index, _NOISE_TAG, agent_key(aid))
            rng.standard_normal(out=noises[j])
        noises *= scale
        if ego_id is not None:
            # behavioral prior: the deciding agent re-decides its own
            # inputs freely but expects others to roughly hold course
            for j, aid in enumerate(group):
                if aid != ego_id:
                    noises[j] *= params.other_noise_scale

        traj, costs, inputs = rollout_group(
            q0, nominals, noises, goal_arr, self.grid, fps, vessels,
            self.cost_params, params, pool=self._pool, workers=self.workers)
        batch = RolloutBatch(agent_ids=list(group), noise=noises, inputs=inputs,
                             trajectories=traj, costs=costs,
                             valid=costs <= self.cost_params.c_collision)

        valid_sets = filter_colliding(batch.costs, self.cost_params.c_collision)
        group_keys = tuple(sorted(agent_key(aid) for aid in group))
        rng = _stream(params.seed, self.call_index, _RECOMBINE_TAG, *group_keys)
        indices, fallback = recombine(valid_sets, k_samples, rng, costs=batch.costs)

        total = system_costs(indices, batch.trajectories, batch.costs, fps,
                             self.cost_params)
        weights = importance_weights(total, params.lambda_temp)

        sequences = {}
        for j, aid in enumerate(group):
            # sum_k w_k eps[idx_j(k)] with weights of repeated samples merged
            w_eff = np.bincount(indices[j], weights=weights, minlength=k_samples)
            update = (w_eff @ noises[j].reshape(k_samples, horizon * 4)).reshape(horizon, 4)
            seq = np.clip(nominals[j] + update, -vessels[j].f_max, vessels[j].f_max)
            sequences[aid] = seq
            self.hotstarts[aid] = seq
            diag.valid_counts[aid] = int(valid_sets[j].size)
            diag.fallback[aid] = bool(fallback[j])
            diag.min_cost[aid] = float(total.min())
            diag.ess[aid] = float(1.0 / np.sum(weights ** 2))

        # noise-free rollout of the updated sequences for display/metrics
        planned, _, _ = rollout_group(
            q0, np.stack([sequences[aid] for aid in group]),
            np.zeros((len(group), 1, horizon, 4)), goal_arr, self.grid, fps,
            vessels, self.cost_params, params)
        trajectories = {aid: planned[j, 0, :, :6] for j, aid in enumerate(group)}
        return sequences, trajectories

    def plan(self, states: dict, goals: dict, ego_id=None) -> PlanResult:
        """Run one planning cycle.

        states/goals map agent id -> VesselState / goal point. With an
        ego id only the ego's interaction group is planned (its
        estimates of the other members included); with ego_id=None all
        groups are planned, which is the centralized controller.
        """
        t0 = time.perf_counter()
        ids = sorted(states.keys(), key=str)
        missing = [aid for aid in ids if aid not in goals]
        if missing:
            raise ValueError(f"missing goals for agents {missing}")
        groups = self._interaction_groups(ids, states)
        diag = PlanDiagnostics(groups=[list(g) for g in groups])
        if ego_id is not None:
            if not any(ego_id in g for g in groups):
                raise ValueError(f"unknown ego agent {ego_id!r}")
            groups = [g for g in groups if ego_id in g]

        sequences: dict = {}
        trajectories: dict = {}
        for group in groups:
            seqs, trajs = self._plan_group(group, states, goals, diag, ego_id=ego_id)
            sequences.update(seqs)
            trajectories.update(trajs)

        self.call_index += 1
        diag.wall_time_s = time.perf_counter() - t0
        ego_command = None
        if ego_id is not None:
            ego_command = ControlInput.from_array(sequences[ego_id][0])
        return PlanResult(ego_command=ego_command, sequences=sequences,
                          trajectories=trajectories, diagnostics=diag)
