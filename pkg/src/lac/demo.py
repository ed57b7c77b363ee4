"""A scripted kitchen scenario where the critic overrules the prior.

The prior prefers walking to the drawer; looking ahead shows the drawer is
empty, while taking the saltshaker from the cabinet finishes the subgoal.
Five candidates, Q-values (-1, +2, +0.5, -0.5, 0) in prior order.
"""

from __future__ import annotations

import math

from lac.backends.scripted import Rule, ScriptedBackend
from lac.core import Goal, History

GOAL = "put a saltshaker in the drawer"
START = "You are in a kitchen. You see a cabinet 2, a countertop 1 and a drawer 1."

PRIOR = {
    "go to drawer 1": 0.5,
    "take saltshaker 1 from cabinet 2": 0.3,
    "open cabinet 2": 0.1,
    "examine cabinet 2": 0.06,
    "look": 0.04,
}
FIRST_TOKENS = {"go": 0.5, "take": 0.3, "open": 0.1, "examine": 0.06, "look": 0.04}

_OBS = r"\nObservation:[^\n]*"
_JUDGE = r"\nCritic:[^\n]*This step is $"


def _q(q: float) -> dict[str, float]:
    # marker masses whose log-ratio is exactly q
    return {"GOOD": 0.1 * math.exp(q), "BAD": 0.1}


def demo_rules() -> list[Rule]:
    return [
        # judgment positions, keyed on the last simulated action
        Rule(r"Action:take saltshaker 1 from cabinet 2" + _OBS + _JUDGE, next_tokens=_q(2.0)),
        Rule(r"Action:open drawer 1" + _OBS + _JUDGE, next_tokens=_q(-1.0)),
        Rule(r"Action:open cabinet 2" + _OBS + _JUDGE, next_tokens=_q(0.5)),
        Rule(r"Action:examine cabinet 2\n.*This step is $", next_tokens=_q(-0.5)),
        Rule(r"This step is $", next_tokens=_q(0.0)),
        # world model: observations
        Rule(r"Action:go to drawer 1\nObservation:$", "You arrive at drawer 1. The drawer 1 is closed."),
        Rule(r"Action:open drawer 1\nObservation:$", "You open the drawer 1. The drawer 1 is empty."),
        Rule(r"Action:take saltshaker 1 from cabinet 2\nObservation:$",
             "You pick up the saltshaker 1 from the cabinet 2."),
        Rule(r"Action:open cabinet 2\nObservation:$", "You open the cabinet 2. In it, you see a saltshaker 1."),
        Rule(r"Action:examine cabinet 2\nObservation:$", "The cabinet 2 is closed."),
        Rule(r"Action:look\nObservation:$", "You are in the middle of the kitchen."),
        # world model: reflections
        Rule(r"Action:go to drawer 1" + _OBS + r"\nCritic:$",
             "The drawer is closed, so I need to open it. This step is UNKNOWN."),
        Rule(r"Action:open drawer 1" + _OBS + r"\nCritic:$",
             "The drawer is empty and I do not hold the saltshaker. This step is BAD."),
        Rule(r"Action:take saltshaker 1 from cabinet 2" + _OBS + r"\nCritic:$",
             "I am holding the saltshaker now. This step is GOOD."),
        Rule(r"Action:open cabinet 2" + _OBS + r"\nCritic:$",
             "The saltshaker is in the cabinet. This step is GOOD."),
        Rule(r"\nCritic:$", "Nothing new here. This step is UNKNOWN."),
        # world model: next simulated action
        Rule(r"I need to open it\. This step is UNKNOWN\.\nAction:$", "open drawer 1"),
        Rule(r"\nCritic:[^\n]*\nAction:$", "look"),
        # actor: completions of each first token, then the greedy action
        Rule(r"\nAction:go$", " to drawer 1"),
        Rule(r"\nAction:take$", " saltshaker 1 from cabinet 2"),
        Rule(r"\nAction:open$", " cabinet 2"),
        Rule(r"\nAction:examine$", " cabinet 2"),
        Rule(r"\nAction:look$", ""),
        Rule(r"\nAction:$", "go to drawer 1", next_tokens=FIRST_TOKENS, continuations=PRIOR),
    ]


def demo_backend() -> ScriptedBackend:
    return ScriptedBackend(demo_rules())


def demo_history() -> History:
    return History(Goal(GOAL), START)
