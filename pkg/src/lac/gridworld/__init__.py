from lac.gridworld.env import (
    ACTIONS,
    GridState,
    GridWorldEnv,
    TaskKind,
    TaskSpec,
    WorldObject,
    distance,
    optimal_action,
    reset,
    step,
)
from lac.gridworld.oracle import OracleBackend, OracleDesync
from lac.gridworld.render import parse_observation, render_observation

__all__ = [
    "ACTIONS", "GridState", "GridWorldEnv", "TaskKind", "TaskSpec", "WorldObject",
    "distance", "optimal_action", "reset", "step", "OracleBackend", "OracleDesync",
    "parse_observation", "render_observation",
]
