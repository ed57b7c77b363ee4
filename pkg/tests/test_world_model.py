import pytest

from lac.backends import Rule, ScriptedBackend
from lac.core import Goal, History, Termination
from lac.world_model import RolloutConfig, rollout

H = History(Goal("go to the red ball"), "start")


def test_immediate_good_terminates():
    b = ScriptedBackend([
        Rule(r"Observation:$", "You see a red ball 1 step forward"),
        Rule(r"Critic:$", "Almost there. This step is GOOD."),
    ])
    r = rollout(H, "go forward", RolloutConfig(), b)
    assert len(r.steps) == 1 and r.terminated_by is Termination.GOOD
    assert r.steps[0].action == "go forward"


def test_unknown_runs_to_depth_limit():
    b = ScriptedBackend([
        Rule(r"Observation:$", "nothing"),
        Rule(r"Critic:$", "Not sure. This step is UNKNOWN."),
        Rule(r"Action:$", "turn left"),
    ])
    r = rollout(H, "go forward", RolloutConfig(max_depth=4), b)
    assert len(r.steps) == 4 and r.terminated_by is Termination.DEPTH_LIMIT
    assert [s.action for s in r.steps] == ["go forward", "turn left", "turn left", "turn left"]


def test_without_reflections_runs_to_depth():
    b = ScriptedBackend([
        Rule(r"Critic:", "must not be asked"),
        Rule(r"Observation:$", "nothing"),
        Rule(r"Action:$", "turn left"),
    ])
    r = rollout(H, "go forward", RolloutConfig(include_reflections=False), b)
    assert len(r.steps) == 4 and all(s.reflection is None for s in r.steps)


def test_backend_failure_returns_partial_rollout():
    b = ScriptedBackend([
        Rule(r"Observation:$", "nothing"),
        Rule(r"Critic:$", "Not sure. This step is UNKNOWN."),
    ])  # no rule for the next action
    r = rollout(H, "go forward", RolloutConfig(), b)
    assert len(r.steps) == 1 and r.terminated_by is Termination.DEPTH_LIMIT and r.warning


def test_depth_validation():
    with pytest.raises(ValueError):
        RolloutConfig(max_depth=0)
