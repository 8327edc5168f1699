"""Interaction-aware multi-vessel MPPI planner and canal simulator."""

from .costs import CostParams
from .dynamics import ControlInput, VesselParams, VesselState
from .engine import (
    AgentSpec,
    EpisodeLog,
    Randomization,
    RunMetrics,
    ScenarioConfig,
    ScenarioError,
    classify_outcome,
    count_violations,
    randomize_scenario,
    run_episode,
    step_world,
)
from .goals import GoalParams, ego_local_goal, predict_local_goal
from .planner import MppiPlanner, PlannerParams, PlanResult
from .scenario import parse_scenario, serialize_scenario
from .world import Footprint, GlobalPath, OccupancyGrid, load_map_file, plan_global_path

__all__ = [
    "AgentSpec", "ControlInput", "CostParams", "EpisodeLog", "Footprint",
    "GlobalPath", "GoalParams", "MppiPlanner", "OccupancyGrid", "PlanResult",
    "PlannerParams", "Randomization", "RunMetrics", "ScenarioConfig",
    "ScenarioError", "VesselParams", "VesselState", "classify_outcome",
    "count_violations", "ego_local_goal", "load_map_file", "parse_scenario",
    "plan_global_path", "predict_local_goal", "randomize_scenario",
    "run_episode", "serialize_scenario", "step_world",
]
__version__ = "0.1.0"
