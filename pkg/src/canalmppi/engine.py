"""Closed-loop multi-agent episodes.

One episode wires controllers (sampling planners, scripted policies,
or a teleoperated human) to the shared vessel simulator, steps the
world at the control period with zero-order-hold inputs, records a
per-tick log, and classifies the outcome as success, deadlock, or
collision. Rule-violation events are counted on the executed states.

Controller modes:

  centralized  one planner computes every vessel's input per tick
  dec_comm     each vessel plans for the whole local system, knowing
               the true local goals of the other planning vessels
  dec_nocomm   same, but other vessels' goals are predicted with the
               constant-velocity model

All randomness derives from the episode seed, so identical seeds give
identical logs regardless of worker threads (teleop input excluded).
"""

from __future__ import annotations

import hashlib
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .costs import (
    CostParams,
    headon_velocity_check,
    row_velocity_check,
    starboard_within_region,
    vessels_overlap,
)
from .dynamics import ControlInput, VesselParams, VesselState, step_array, wrap_angle
from .goals import GoalParams, ego_local_goal, predict_local_goal
from .planner import MppiPlanner, PlannerParams
from .world import Footprint, OccupancyGrid, footprint_collides, plan_global_path

MODES = ("centralized", "dec_comm", "dec_nocomm")
CONTROLLERS = ("mppi", "scripted", "teleop")


class ScenarioError(Exception):
    """Raised for invalid or unsatisfiable scenario configurations."""


@dataclass
class AgentSpec:
    """One vessel: controller kind, start pose, global goal, overrides."""

    id: str
    controller: str = "mppi"
    policy: str | None = None          # scripted policy name
    start: tuple = (0.0, 0.0, 0.0)     # x [m], y [m], heading [rad]
    goal: tuple = (0.0, 0.0)
    vessel: VesselParams | None = None
    planner: PlannerParams | None = None
    costs: CostParams | None = None
    goals: GoalParams | None = None

    def __post_init__(self):
        if self.controller not in CONTROLLERS:
            raise ScenarioError(f"agent {self.id}: unknown controller {self.controller!r}")
        if self.controller == "scripted" and self.policy not in SCRIPTED_POLICIES:
            raise ScenarioError(
                f"agent {self.id}: unknown scripted policy {self.policy!r}; "
                f"available: {sorted(SCRIPTED_POLICIES)}")


@dataclass
class Randomization:
    start_jitter_m: float = 0.0
    goal_jitter_m: float = 0.0
    heading_jitter_rad: float = 0.0


@dataclass
class ScenarioConfig:
    """Declarative episode description with resolved parameter defaults."""

    grid: OccupancyGrid
    agents: list
    mode: str = "dec_nocomm"
    control_period_s: float = 0.1
    sim_substep_s: float = 0.05
    max_time_s: float = 120.0
    seed: int = 0
    goal_tolerance_m: float = 2.0
    deadlock_speed: float = 0.05       # [m/s]
    deadlock_window_s: float = 30.0
    path_inflation_m: float = 1.0
    workers: int = 1
    log_stride: int = 5                # planned-trajectory decimation for the log
    vessel: VesselParams = field(default_factory=VesselParams)
    planner: PlannerParams = field(default_factory=PlannerParams)
    costs: CostParams = field(default_factory=CostParams)
    goals: GoalParams = field(default_factory=GoalParams)
    randomization: Randomization = field(default_factory=Randomization)
    map_ref: dict | None = None        # provenance for serialization / frames

    def __post_init__(self):
        if not self.agents:
            raise ScenarioError("scenario needs at least one agent")
        ids = [a.id for a in self.agents]
        if len(set(ids)) != len(ids):
            raise ScenarioError(f"duplicate agent ids in {ids}")
        if self.mode not in MODES:
            raise ScenarioError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        ratio = self.control_period_s / self.sim_substep_s
        if abs(ratio - round(ratio)) > 1e-9 or ratio < 1:
            raise ScenarioError("control_period_s must be a multiple of sim_substep_s")

    def vessel_of(self, spec: AgentSpec) -> VesselParams:
        return spec.vessel or self.vessel

    def planner_of(self, spec: AgentSpec) -> PlannerParams:
        return spec.planner or self.planner

    def costs_of(self, spec: AgentSpec) -> CostParams:
        return spec.costs or self.costs

    def goals_of(self, spec: AgentSpec) -> GoalParams:
        return spec.goals or self.goals


@dataclass
class TickRecord:
    tick: int
    time_s: float
    states: dict                       # id -> (6,) state array
    inputs: dict                       # id -> (4,) applied thruster forces
    goals: dict                        # id -> (2,) local goal pursued
    planned: dict                      # id -> (n, 2) decimated planned path
    violations: list                   # [(i, j, kind)] on executed states
    collisions: list                   # [(id, "static")] or [(i, j, "dynamic")]
    plan_times_ms: list
    diag: dict = field(default_factory=dict)  # id -> planner diagnostics


@dataclass
class EpisodeLog:
    ticks: list = field(default_factory=list)

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for rec in self.ticks:
            h.update(str(rec.tick).encode())
            for aid in sorted(rec.states):
                h.update(aid.encode())
                h.update(np.asarray(rec.states[aid], dtype=float).tobytes())
                h.update(np.asarray(rec.inputs.get(aid, np.zeros(4)), dtype=float).tobytes())
                h.update(np.asarray(rec.goals.get(aid, np.zeros(2)), dtype=float).tobytes())
                planned = rec.planned.get(aid)
                if planned is not None:
                    h.update(np.asarray(planned, dtype=float).tobytes())
            h.update(repr(sorted(rec.violations)).encode())
            h.update(repr(sorted(rec.collisions)).encode())
        return h.hexdigest()


@dataclass
class RunMetrics:
    outcome: str                       # success | deadlock | collision
    rule_violation_events: int
    time_to_completion: float          # [s]; episode end time unless success
    per_agent_distance: dict
    total_distance: float
    plan_wall_times_ms: list


# ---------------------------------------------------------------------------
# scripted policies

class ConstantVelocityPolicy:
    """Hold the spawn heading at a target speed."""

    def __init__(self, spec: AgentSpec, vessel: VesselParams, target_speed: float = 1.2):
        self.heading_ref = spec.start[2]
        self.v_ref = min(target_speed, vessel.v_max)
        self.vessel = vessel

    def __call__(self, state: VesselState, others, tick: int) -> ControlInput:
        return _heading_speed_control(state, self.heading_ref, self.v_ref, self.vessel)


class HoldPositionPolicy:
    """Damp all motion; the vessel stays parked where it spawned."""

    def __init__(self, spec: AgentSpec, vessel: VesselParams):
        self.vessel = vessel

    def __call__(self, state: VesselState, others, tick: int) -> ControlInput:
        f_long = -300.0 * state.surge
        f_lat = -300.0 * state.sway
        f_turn = -200.0 * state.yaw_rate
        return ControlInput(f_long / 2, f_long / 2,
                            f_lat / 2 + f_turn, f_lat / 2 - f_turn).clamped(self.vessel.f_max)


class WrongSideAvoiderPolicy:
    """Drive to the goal but dodge oncoming traffic to port (the wrong side).

    Once triggered, the dodge is held for a fixed window, the way a
    human commits to one side of an encounter, rather than re-aiming
    at the other vessel every tick.
    """

    def __init__(self, spec: AgentSpec, vessel: VesselParams,
                 target_speed: float = 1.2, avoid_radius: float = 14.0,
                 dodge_rad: float = 0.7, commit_ticks: int = 80):
        self.goal = np.asarray(spec.goal, dtype=float)
        self.v_ref = min(target_speed, vessel.v_max)
        self.avoid_radius = avoid_radius
        self.dodge_rad = dodge_rad
        self.commit_ticks = commit_ticks
        self.committed_until = -1
        self.vessel = vessel

    def __call__(self, state: VesselState, others, tick: int) -> ControlInput:
        to_goal = self.goal - state.position
        if np.linalg.norm(to_goal) < 1.0:
            return _heading_speed_control(state, state.heading, 0.0, self.vessel)
        heading_ref = math.atan2(to_goal[1], to_goal[0])
        if tick >= self.committed_until:
            for other in others:
                rel = other.position - state.position
                if np.linalg.norm(rel) > self.avoid_radius:
                    continue
                bearing = wrap_angle(math.atan2(rel[1], rel[0]) - state.heading)
                closing = float(np.dot(other.world_velocity() - state.world_velocity(),
                                       rel)) < 0.0
                if abs(bearing) < math.pi / 2 and closing:
                    self.committed_until = tick + self.commit_ticks
                    break
        if tick < self.committed_until:
            heading_ref += self.dodge_rad  # steer left, against the rules
        return _heading_speed_control(state, heading_ref, self.v_ref, self.vessel)


def _heading_speed_control(state: VesselState, heading_ref: float, v_ref: float,
                           vessel: VesselParams) -> ControlInput:
    err = float(wrap_angle(heading_ref - state.heading))
    v_cmd = v_ref * math.cos(err)  # slow down while turning
    f_base = vessel.drag_surge * v_cmd + 120.0 * (v_cmd - state.surge)
    f_turn = 150.0 * err - 250.0 * state.yaw_rate
    return ControlInput(f_base / 2 + f_turn, f_base / 2 - f_turn,
                        0.0, 0.0).clamped(vessel.f_max)


SCRIPTED_POLICIES = {
    "constant_velocity": ConstantVelocityPolicy,
    "hold_position": HoldPositionPolicy,
    "wrong_side_avoider": WrongSideAvoiderPolicy,
}


# ---------------------------------------------------------------------------
# world stepping and executed-state checks

def step_world(states: dict, inputs: dict, control_period_s: float,
               sim_substep_s: float, vessels: dict) -> dict:
    """Advance every vessel simultaneously; inputs held over the period."""
    if set(states) != set(inputs):
        raise ValueError("states and inputs must cover the same agents")
    n_sub = int(round(control_period_s / sim_substep_s))
    out = {}
    for aid, state in states.items():
        q = state.as_array()
        u = np.asarray(inputs[aid], dtype=float)
        for _ in range(n_sub):
            q = step_array(q, u, sim_substep_s, vessels[aid])
        out[aid] = VesselState.from_array(q)
    return out


def executed_violations(states: dict, cost_params: CostParams) -> list:
    """Ordered-pair regulation flags on the executed states of one tick."""
    flags = []
    items = sorted(states.items())
    for i_id, si in items:
        for j_id, sj in items:
            if i_id == j_id:
                continue
            if not starboard_within_region((si.x, si.y, si.heading),
                                           (sj.x, sj.y), sj.speed, cost_params):
                continue
            vi, vj = si.world_velocity(), sj.world_velocity()
            if row_velocity_check(vi, vj, cost_params.delta, cost_params.cross_sign):
                flags.append((i_id, j_id, "row"))
            if headon_velocity_check(vi, vj, cost_params.delta):
                flags.append((i_id, j_id, "atr"))
    return flags


def executed_collisions(states: dict, grid: OccupancyGrid, footprints: dict) -> list:
    hits = []
    items = sorted(states.items())
    for aid, state in items:
        if footprint_collides(grid, (state.x, state.y, state.heading), footprints[aid]):
            hits.append((aid, "static"))
    for idx, (i_id, si) in enumerate(items):
        for j_id, sj in items[idx + 1:]:
            if vessels_overlap((si.x, si.y, si.heading), footprints[i_id],
                               (sj.x, sj.y, sj.heading), footprints[j_id]):
                hits.append((i_id, j_id, "dynamic"))
    return hits


def classify_outcome(log: EpisodeLog, scenario: ScenarioConfig) -> str:
    """Collision beats success beats deadlock, over the whole log."""
    if any(rec.collisions for rec in log.ticks):
        return "collision"
    goals = {a.id: np.asarray(a.goal, dtype=float) for a in scenario.agents}
    tol = scenario.goal_tolerance_m
    for rec in log.ticks:
        done = all(np.linalg.norm(np.asarray(rec.states[aid])[:2] - goals[aid]) <= tol
                   for aid in goals)
        if done:
            return "success"
    return "deadlock"


def count_violations(log: EpisodeLog) -> int:
    """Maximal contiguous runs of ticks with any violation flag set."""
    events = 0
    prev = False
    for rec in log.ticks:
        cur = bool(rec.violations)
        if cur and not prev:
            events += 1
        prev = cur
    return events


# ---------------------------------------------------------------------------
# scenario randomization

def randomize_scenario(base: ScenarioConfig, seed: int,
                       max_tries: int = 100) -> ScenarioConfig:
    """Jitter starts, headings, and goals; spawns stay collision-free.

    Derivation uses only the seed and the base agents, never the mode,
    so all controller modes see identical randomized scenarios.
    """
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(2,)))
    rnd = base.randomization
    footprints = {a.id: Footprint(base.vessel_of(a).length, base.vessel_of(a).width)
                  for a in base.agents}

    def jitter_point(point, radius):
        angle = rng.uniform(0.0, 2.0 * math.pi)
        dist = radius * math.sqrt(rng.uniform(0.0, 1.0))
        return (point[0] + dist * math.cos(angle), point[1] + dist * math.sin(angle))

    for _ in range(max_tries):
        agents = []
        for spec in base.agents:
            sx, sy = jitter_point(spec.start[:2], rnd.start_jitter_m)
            heading = float(wrap_angle(
                spec.start[2] + rng.uniform(-rnd.heading_jitter_rad, rnd.heading_jitter_rad)))
            goal = jitter_point(spec.goal, rnd.goal_jitter_m)
            agents.append(replace(spec, start=(sx, sy, heading), goal=goal))

        states = {a.id: VesselState(x=a.start[0], y=a.start[1], heading=a.start[2])
                  for a in agents}
        if executed_collisions(states, base.grid, footprints):
            continue
        if any(base.grid.occupied(a.goal[0], a.goal[1]) for a in agents):
            continue
        return replace(base, agents=agents, seed=seed)
    raise ScenarioError(f"no collision-free spawn found in {max_tries} tries (seed {seed})")


# ---------------------------------------------------------------------------
# the episode loop

class _EpisodeRunner:
    def __init__(self, scenario: ScenarioConfig, seed: int,
                 teleop_source=None, frame_sink=None, realtime: bool = False,
                 workers: int | None = None):
        self.sc = scenario
        self.seed = seed
        self.teleop_source = teleop_source
        self.frame_sink = frame_sink
        self.realtime = realtime
        self.workers = scenario.workers if workers is None else workers

        grid = scenario.grid
        self.vessels = {a.id: scenario.vessel_of(a) for a in scenario.agents}
        self.footprints = {aid: Footprint(vp.length, vp.width)
                           for aid, vp in self.vessels.items()}
        self.states = {a.id: VesselState(x=a.start[0], y=a.start[1], heading=a.start[2])
                       for a in scenario.agents}
        self.specs = {a.id: a for a in scenario.agents}
        self.mppi_ids = [a.id for a in scenario.agents if a.controller == "mppi"]

        # global paths for planning vessels; config errors surface here
        self.paths = {}
        for aid in self.mppi_ids:
            spec = self.specs[aid]
            try:
                self.paths[aid] = plan_global_path(grid, spec.start[:2], spec.goal,
                                                   inflation=scenario.path_inflation_m)
            except Exception as exc:
                raise ScenarioError(f"agent {aid}: global path failed: {exc}") from exc

        self.policies = {
            a.id: SCRIPTED_POLICIES[a.policy](a, self.vessels[a.id])
            for a in scenario.agents if a.controller == "scripted"
        }

        self.planners = {}
        if scenario.mode == "centralized":
            params = replace(scenario.planner, seed=seed)
            self.planners["__central__"] = MppiPlanner(
                grid, params, scenario.costs, self.vessels, workers=self.workers)
        else:
            for aid in self.mppi_ids:
                spec = self.specs[aid]
                params = replace(scenario.planner_of(spec), seed=seed)
                self.planners[aid] = MppiPlanner(
                    grid, params, scenario.costs_of(spec), self.vessels,
                    workers=self.workers)

    def close(self):
        for planner in self.planners.values():
            planner.close()

    def _true_local_goal(self, aid: str) -> np.ndarray:
        r_pg = self.sc.goals_of(self.specs[aid]).r_pg
        return ego_local_goal(self.paths[aid], self.states[aid].position, r_pg)

    def _predicted_goal(self, viewer: str, target: str) -> np.ndarray:
        spec = self.specs.get(viewer)
        gp = self.sc.goals_of(spec) if spec else self.sc.goals
        pp = self.sc.planner_of(spec) if spec else self.sc.planner
        return predict_local_goal(self.states[target], pp.horizon, pp.dt,
                                  gp.k_s, self.sc.grid)

    def _goal_view(self, viewer: str, true_goals: dict) -> dict:
        """Local goals as seen by one deciding agent (or the central one).

        The viewer knows its own true goal; other planning vessels' true
        goals are available when communicated (centralized / dec_comm).
        Scripted and teleoperated vessels never communicate, so their
        goals are always predicted.
        """
        view = {}
        for aid in self.states:
            if aid == viewer:
                view[aid] = true_goals[aid]
            elif self.sc.mode in ("centralized", "dec_comm") and aid in true_goals:
                view[aid] = true_goals[aid]
            else:
                view[aid] = self._predicted_goal(viewer, aid)
        return view

    def _teleop_input(self, aid: str) -> np.ndarray:
        cmd = self.teleop_source(aid) if self.teleop_source else None
        if cmd is None:
            return np.zeros(4)
        surge, yaw = float(np.clip(cmd[0], -1, 1)), float(np.clip(cmd[1], -1, 1))
        f_max = self.vessels[aid].f_max
        return np.array([surge * f_max / 2, surge * f_max / 2,
                         yaw * f_max / 2, -yaw * f_max / 2])

    def run(self) -> tuple:
        sc = self.sc
        log = EpisodeLog()
        max_ticks = int(round(sc.max_time_s / sc.control_period_s))
        deadlock_ticks_needed = int(round(sc.deadlock_window_s / sc.control_period_s))
        slow_ticks = 0
        goals_world = {a.id: np.asarray(a.goal, dtype=float) for a in sc.agents}
        outcome_time = sc.max_time_s
        wall_start = time.perf_counter()

        for tick in range(max_ticks + 1):
            now = tick * sc.control_period_s
            violations = executed_violations(self.states, sc.costs)
            collisions = executed_collisions(self.states, sc.grid, self.footprints)
            record = TickRecord(
                tick=tick, time_s=now,
                states={aid: s.as_array() for aid, s in self.states.items()},
                inputs={}, goals={}, planned={},
                violations=violations, collisions=collisions, plan_times_ms=[])
            log.ticks.append(record)
            if self.frame_sink:
                self.frame_sink(record, self)

            if collisions:
                outcome_time = now
                break
            if all(np.linalg.norm(self.states[aid].position - goals_world[aid])
                   <= sc.goal_tolerance_m for aid in goals_world):
                outcome_time = now
                break
            if all(s.speed < sc.deadlock_speed for s in self.states.values()):
                slow_ticks += 1
            else:
                slow_ticks = 0
            if slow_ticks >= deadlock_ticks_needed or tick == max_ticks:
                outcome_time = now
                break

            true_goals = {aid: self._true_local_goal(aid) for aid in self.mppi_ids}
            inputs = {}
            if sc.mode == "centralized" and self.mppi_ids:
                planner = self.planners["__central__"]
                view = self._goal_view("__central__", true_goals)
                res = planner.plan(self.states, view)
                record.plan_times_ms.append(res.diagnostics.wall_time_s * 1e3)
                for aid in self.mppi_ids:
                    inputs[aid] = res.sequences[aid][0]
                    record.goals[aid] = view[aid]
                    record.planned[aid] = res.trajectories[aid][::sc.log_stride, :2]
                    record.diag[aid] = {
                        "valid": res.diagnostics.valid_counts[aid],
                        "fallback": res.diagnostics.fallback[aid],
                        "ess": res.diagnostics.ess[aid],
                        "min_cost": res.diagnostics.min_cost[aid],
                    }
            else:
                for aid in self.mppi_ids:
                    planner = self.planners[aid]
                    view = self._goal_view(aid, true_goals)
                    res = planner.plan(self.states, view, ego_id=aid)
                    record.plan_times_ms.append(res.diagnostics.wall_time_s * 1e3)
                    inputs[aid] = res.ego_command.as_array()
                    record.goals[aid] = view[aid]
                    record.planned[aid] = res.trajectories[aid][::sc.log_stride, :2]
                    record.diag[aid] = {
                        "valid": res.diagnostics.valid_counts[aid],
                        "fallback": res.diagnostics.fallback[aid],
                        "ess": res.diagnostics.ess[aid],
                        "min_cost": res.diagnostics.min_cost[aid],
                    }

            for aid, spec in self.specs.items():
                if spec.controller == "scripted":
                    others = [s for oid, s in sorted(self.states.items()) if oid != aid]
                    inputs[aid] = self.policies[aid](self.states[aid], others, tick).as_array()
                    record.goals[aid] = goals_world[aid]
                elif spec.controller == "teleop":
                    inputs[aid] = self._teleop_input(aid)
                    record.goals[aid] = goals_world[aid]

            record.inputs = {aid: np.asarray(u, dtype=float) for aid, u in inputs.items()}
            self.states = step_world(self.states, inputs, sc.control_period_s,
                                     sc.sim_substep_s, self.vessels)

            if self.realtime:
                ahead = (tick + 1) * sc.control_period_s - (time.perf_counter() - wall_start)
                if ahead > 0:
                    time.sleep(ahead)

        outcome = classify_outcome(log, sc)
        distances = {}
        for aid in self.states:
            pos = np.array([rec.states[aid][:2] for rec in log.ticks])
            distances[aid] = float(np.linalg.norm(np.diff(pos, axis=0), axis=1).sum()) \
                if len(pos) > 1 else 0.0
        metrics = RunMetrics(
            outcome=outcome,
            rule_violation_events=count_violations(log),
            time_to_completion=outcome_time,
            per_agent_distance=distances,
            total_distance=float(sum(distances.values())),
            plan_wall_times_ms=[t for rec in log.ticks for t in rec.plan_times_ms],
        )
        return metrics, log


def run_episode(scenario: ScenarioConfig, seed: int | None = None,
                teleop_source=None, frame_sink=None, realtime: bool = False,
                workers: int | None = None):
    """Run one episode to completion; returns (RunMetrics, EpisodeLog)."""
    runner = _EpisodeRunner(scenario, scenario.seed if seed is None else seed,
                            teleop_source=teleop_source, frame_sink=frame_sink,
                            realtime=realtime, workers=workers)
    try:
        return runner.run()
    finally:
        runner.close()
