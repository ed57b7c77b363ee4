"""Actor-critic decision engine for language-model agents.

Candidates come from the model's prior, each is rolled out with the model
as a world model, scored by the model's belief in success versus failure,
and the next action is the argmax of prior * exp(alpha * Q).
"""

from lac.core import (
    CRITIC_ONLY,
    CandidateEvaluation,
    DecisionRecord,
    EpisodeResult,
    Goal,
    History,
    ImprovedDistribution,
    Mode,
    OutcomeBelief,
    Reflection,
    RolloutTrajectory,
    Step,
)
from lac.harness import EngineConfig, decide_step, run_batch, run_episode
from lac.policy import ImprovementInput, improve

__all__ = [
    "CRITIC_ONLY", "CandidateEvaluation", "DecisionRecord", "EpisodeResult", "Goal", "History",
    "ImprovedDistribution", "Mode", "OutcomeBelief", "Reflection", "RolloutTrajectory", "Step",
    "EngineConfig", "decide_step", "run_batch", "run_episode", "ImprovementInput", "improve",
]
