"""Scenario files: parsing, validation, serialization.

Scenarios are declarative YAML with units encoded in key names
(`r_pg_m`, `dt_s`, `f_max_n`) so every number is self-describing.
Unknown keys are rejected with the offending section named, omitted
parameters fall back to the documented defaults, and a parsed config
serializes back to an equivalent file.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import yaml

from .costs import CostParams
from .dynamics import VesselParams
from .engine import AgentSpec, Randomization, ScenarioConfig, ScenarioError
from .goals import GoalParams
from .planner import PlannerParams
from .world import SYNTHETIC_BUILDERS, load_map_file

VESSEL_KEYS = {
    "mass_surge_kg": "mass_surge",
    "mass_sway_kg": "mass_sway",
    "inertia_yaw_kgm2": "inertia_yaw",
    "drag_surge_n_per_m_s": "drag_surge",
    "drag_sway_n_per_m_s": "drag_sway",
    "drag_yaw_nm_per_rad_s": "drag_yaw",
    "lever_longitudinal_m": "lever_longitudinal",
    "lever_lateral_m": "lever_lateral",
    "length_m": "length",
    "width_m": "width",
    "f_max_n": "f_max",
    "v_max_m_s": "v_max",
}

PLANNER_KEYS = {
    "samples": "samples",
    "horizon_steps": "horizon",
    "dt_s": "dt",
    "lambda_temp": "lambda_temp",
    "nu": "nu",
    "sigma_diag": "sigma_diag",
    "seed": "seed",
    "safety_margin_m": "safety_margin_m",
    "interaction_radius_m": "interaction_radius_m",
    "other_noise_scale": "other_noise_scale",
}

COST_KEYS = {
    "collision": "c_collision",
    "right_of_way": "c_row",
    "avoid_to_right": "c_atr",
    "tracking_scale": "k_tracking",
    "rotation_slow": "k_rot_slow",
    "rotation": "k_rot",
    "slow_speed_m_s": "slow_speed_threshold",
    "overspeed": "c_speed",
    "sample_scale": "gamma",
    "angular_margin_rad": "delta",
    "regulation_radius_m": "regulation_radius",
    "significant_speed_m_s": "significant_speed",
    "flip_cross": "flip_cross",
}

GOAL_KEYS = {
    "r_pg_m": "r_pg",
    "k_s": "k_s",
}

RANDOMIZATION_KEYS = {
    "start_jitter_m": "start_jitter_m",
    "goal_jitter_m": "goal_jitter_m",
    "heading_jitter_rad": "heading_jitter_rad",
}

AGENT_KEYS = ("id", "controller", "policy", "start_pose", "goal",
              "vessel", "planner", "costs", "goals")

TOP_KEYS = ("map", "mode", "control_period_s", "sim_substep_s", "max_time_s",
            "seed", "goal_tolerance_m", "deadlock_speed_m_s", "deadlock_window_s",
            "path_inflation_m", "workers", "log_stride", "randomization",
            "vessel", "planner", "costs", "goals", "agents")


def _build_section(section, data, key_map, cls, defaults=None):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ScenarioError(f"{section}: expected a mapping, got {type(data).__name__}")
    unknown = set(data) - set(key_map)
    if unknown:
        raise ScenarioError(f"{section}: unknown keys {sorted(unknown)}; "
                            f"expected among {sorted(key_map)}")
    kwargs = {key_map[k]: v for k, v in data.items()}
    if kwargs.get("sigma_diag") is not None:
        kwargs["sigma_diag"] = tuple(float(v) for v in kwargs["sigma_diag"])
    base = {} if defaults is None else {
        field: getattr(defaults, field) for field in key_map.values()}
    base.update(kwargs)
    try:
        return cls(**base)
    except (ValueError, TypeError) as exc:
        raise ScenarioError(f"{section}: {exc}") from exc


def _build_map(data, base_dir: Path):
    if not isinstance(data, dict):
        raise ScenarioError("map: expected a mapping with 'file' or 'synthetic'")
    if "file" in data:
        extra = set(data) - {"file", "sidecar"}
        if extra:
            raise ScenarioError(f"map: unknown keys {sorted(extra)}")
        path = base_dir / data["file"]
        if not path.exists():
            raise ScenarioError(f"map: file not found: {path}")
        sidecar = base_dir / data["sidecar"] if "sidecar" in data else None
        grid = load_map_file(path, sidecar)
        return grid, dict(data)
    if "synthetic" in data:
        name = data["synthetic"]
        builder = SYNTHETIC_BUILDERS.get(name)
        if builder is None:
            raise ScenarioError(f"map: unknown synthetic builder {name!r}; "
                                f"available: {sorted(SYNTHETIC_BUILDERS)}")
        kwargs = {k: v for k, v in data.items() if k != "synthetic"}
        try:
            grid = builder(**kwargs)
        except TypeError as exc:
            raise ScenarioError(f"map: bad arguments for {name}: {exc}") from exc
        return grid, dict(data)
    raise ScenarioError("map: needs either 'file' or 'synthetic'")


def _build_agent(index, data, defaults: ScenarioConfig | None = None):
    section = f"agents[{index}]"
    if not isinstance(data, dict):
        raise ScenarioError(f"{section}: expected a mapping")
    unknown = set(data) - set(AGENT_KEYS)
    if unknown:
        raise ScenarioError(f"{section}: unknown keys {sorted(unknown)}")
    if "id" not in data:
        raise ScenarioError(f"{section}: missing required key 'id'")
    if "start_pose" not in data or "goal" not in data:
        raise ScenarioError(f"{section}: missing 'start_pose' or 'goal'")
    start = tuple(float(v) for v in data["start_pose"])
    if len(start) != 3:
        raise ScenarioError(f"{section}: start_pose must be [x, y, heading]")
    goal = tuple(float(v) for v in data["goal"])
    if len(goal) != 2:
        raise ScenarioError(f"{section}: goal must be [x, y]")

    def override(key, key_map, cls):
        if key not in data or data[key] is None:
            return None
        return _build_section(f"{section}.{key}", data[key], key_map, cls)

    try:
        return AgentSpec(
            id=str(data["id"]),
            controller=data.get("controller", "mppi"),
            policy=data.get("policy"),
            start=start,
            goal=goal,
            vessel=override("vessel", VESSEL_KEYS, VesselParams),
            planner=override("planner", PLANNER_KEYS, PlannerParams),
            costs=override("costs", COST_KEYS, CostParams),
            goals=override("goals", GOAL_KEYS, GoalParams),
        )
    except ScenarioError:
        raise
    except (ValueError, TypeError) as exc:
        raise ScenarioError(f"{section}: {exc}") from exc


def scenario_from_dict(data: dict, base_dir=".") -> ScenarioConfig:
    if not isinstance(data, dict):
        raise ScenarioError("scenario file must contain a mapping at the top level")
    unknown = set(data) - set(TOP_KEYS)
    if unknown:
        raise ScenarioError(f"unknown top-level keys {sorted(unknown)}")
    if "map" not in data:
        raise ScenarioError("missing required top-level key 'map'")
    if "agents" not in data or not data["agents"]:
        raise ScenarioError("missing or empty 'agents' list")

    grid, map_ref = _build_map(data["map"], Path(base_dir))
    agents = [_build_agent(i, a) for i, a in enumerate(data["agents"])]

    try:
        return ScenarioConfig(
            grid=grid,
            agents=agents,
            mode=data.get("mode", "dec_nocomm"),
            control_period_s=float(data.get("control_period_s", 0.1)),
            sim_substep_s=float(data.get("sim_substep_s", 0.05)),
            max_time_s=float(data.get("max_time_s", 120.0)),
            seed=int(data.get("seed", 0)),
            goal_tolerance_m=float(data.get("goal_tolerance_m", 2.0)),
            deadlock_speed=float(data.get("deadlock_speed_m_s", 0.05)),
            deadlock_window_s=float(data.get("deadlock_window_s", 30.0)),
            path_inflation_m=float(data.get("path_inflation_m", 1.0)),
            workers=int(data.get("workers", 1)),
            log_stride=int(data.get("log_stride", 5)),
            vessel=_build_section("vessel", data.get("vessel"), VESSEL_KEYS, VesselParams),
            planner=_build_section("planner", data.get("planner"), PLANNER_KEYS, PlannerParams),
            costs=_build_section("costs", data.get("costs"), COST_KEYS, CostParams),
            goals=_build_section("goals", data.get("goals"), GOAL_KEYS, GoalParams),
            randomization=_build_section("randomization", data.get("randomization"),
                                         RANDOMIZATION_KEYS, Randomization),
            map_ref=map_ref,
        )
    except ScenarioError:
        raise
    except (ValueError, TypeError) as exc:
        raise ScenarioError(str(exc)) from exc


def parse_scenario(path) -> ScenarioConfig:
    """Load and validate a scenario file."""
    path = Path(path)
    if not path.exists():
        raise ScenarioError(f"scenario file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ScenarioError(f"{path}: {exc}") from exc
    return scenario_from_dict(data, base_dir=path.parent)


def _section_to_dict(obj, key_map) -> dict:
    out = {}
    for yaml_key, field in key_map.items():
        value = getattr(obj, field)
        if isinstance(value, tuple):
            value = list(value)
        out[yaml_key] = value
    return out


def scenario_to_dict(config: ScenarioConfig) -> dict:
    if config.map_ref is None:
        raise ScenarioError("scenario has no map reference; cannot serialize an "
                            "in-memory grid")
    agents = []
    for spec in config.agents:
        entry = {
            "id": spec.id,
            "controller": spec.controller,
            "start_pose": [float(v) for v in spec.start],
            "goal": [float(v) for v in spec.goal],
        }
        if spec.policy is not None:
            entry["policy"] = spec.policy
        if spec.vessel is not None:
            entry["vessel"] = _section_to_dict(spec.vessel, VESSEL_KEYS)
        if spec.planner is not None:
            entry["planner"] = _section_to_dict(spec.planner, PLANNER_KEYS)
        if spec.costs is not None:
            entry["costs"] = _section_to_dict(spec.costs, COST_KEYS)
        if spec.goals is not None:
            entry["goals"] = _section_to_dict(spec.goals, GOAL_KEYS)
        agents.append(entry)
    return {
        "map": dict(config.map_ref),
        "mode": config.mode,
        "control_period_s": config.control_period_s,
        "sim_substep_s": config.sim_substep_s,
        "max_time_s": config.max_time_s,
        "seed": config.seed,
        "goal_tolerance_m": config.goal_tolerance_m,
        "deadlock_speed_m_s": config.deadlock_speed,
        "deadlock_window_s": config.deadlock_window_s,
        "path_inflation_m": config.path_inflation_m,
        "workers": config.workers,
        "log_stride": config.log_stride,
        "vessel": _section_to_dict(config.vessel, VESSEL_KEYS),
        "planner": _section_to_dict(config.planner, PLANNER_KEYS),
        "costs": _section_to_dict(config.costs, COST_KEYS),
        "goals": _section_to_dict(config.goals, GOAL_KEYS),
        "randomization": _section_to_dict(config.randomization, RANDOMIZATION_KEYS),
        "agents": agents,
    }


def serialize_scenario(config: ScenarioConfig) -> str:
    return yaml.safe_dump(scenario_to_dict(config), sort_keys=False)


def scenario_fingerprint(config: ScenarioConfig, include_mode: bool = False) -> str:
    """Stable hash of the randomized scenario content.

    The controller mode is excluded by default so equal seeds can be
    audited as identical across mode sweeps.
    """
    data = scenario_to_dict(config) if config.map_ref is not None else {}
    data = dict(data)
    data.pop("workers", None)
    if not include_mode:
        data.pop("mode", None)
    blob = json.dumps(data, sort_keys=True).encode()
    h = hashlib.sha256(blob)
    h.update(config.grid.content_hash().encode())
    for spec in config.agents:
        h.update(repr((spec.id, spec.start, spec.goal)).encode())
    return h.hexdigest()
