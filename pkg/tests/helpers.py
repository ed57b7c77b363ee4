"""Shared builders for tests."""

from lac.backends import Rule, ScriptedBackend
from lac.gridworld.env import DIR_VECS, reset


def turn_left_backend() -> ScriptedBackend:
    """Always proposes "turn left" and has an opinion on nothing."""
    return ScriptedBackend([
        Rule(r"This step is $", next_tokens={"GOOD": 0.1, "BAD": 0.1}),
        Rule(r"Observation:$", "You see a wall 1 step forward"),
        Rule(r"Critic:$", "I turned. This step is UNKNOWN."),
        Rule(r"Action:turn$", " left"),
        Rule(r"Action:$", "turn left", next_tokens={"turn": 1.0}, continuations={"turn left": 1.0}),
    ])


def unreachable_by_turning(task: str = "GoTo", start: int = 0) -> int:
    """First seed whose target is not adjacent to the agent."""
    seed = start
    while True:
        _, _, state = reset(seed, task)
        x, y = state.agent_pos
        target = state.positions[state.layout.subtasks[0][1]]
        if all((x + dx, y + dy) != target for dx, dy in DIR_VECS):
            return seed
        seed += 1
