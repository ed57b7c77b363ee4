"""Forward model: predict the trajectory that follows a candidate action."""

from __future__ import annotations

import logging
from dataclasses import dataclass

from lac.backends.base import Backend, BackendError, GenerationRequest
from lac.core import (
    DEFAULT_TEMPLATE,
    History,
    Judgment,
    PromptTemplate,
    Reflection,
    RolloutTrajectory,
    Step,
    Termination,
    action_prompt,
    normalize_action,
    observation_prompt,
    reflection_prompt,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RolloutConfig:
    max_depth: int = 4
    include_reflections: bool = True
    max_tokens: int = 128

    def __post_init__(self):
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")


def _generate(backend: Backend, prompt: str, max_tokens: int) -> str:
    return backend.generate(GenerationRequest(prompt, max_tokens=max_tokens, stop=("\n",))).text.strip()


def rollout(
    history: History,
    action: str,
    cfg: RolloutConfig,
    backend: Backend,
    template: PromptTemplate = DEFAULT_TEMPLATE,
) -> RolloutTrajectory:
    """Simulate up to ``cfg.max_depth`` steps starting with ``action``.

    Each simulated step is observation, then reflection, then the next
    action. The rollout stops early on a GOOD or BAD reflection. A backend
    failure ends the rollout with what was predicted so far.
    """
    refl = cfg.include_reflections
    sim = history if refl else history.without_reflections()
    steps: list[Step] = []
    pending = action
    try:
        for depth in range(cfg.max_depth):
            obs = _generate(backend, observation_prompt(sim, pending, template, refl), cfg.max_tokens)
            if not obs:
                raise BackendError("world model predicted an empty observation")
            step = Step(pending, obs)
            if refl:
                text = _generate(backend, reflection_prompt(sim, step, template), cfg.max_tokens)
                step = Step(pending, obs, Reflection.parse(text))
            steps.append(step)
            sim = sim.append(step)
            verdict = step.reflection.judgment if step.reflection else Judgment.UNKNOWN
            if verdict is not Judgment.UNKNOWN:
                return RolloutTrajectory(tuple(steps), Termination(verdict.value))
            if depth + 1 == cfg.max_depth:
                break
            pending = normalize_action(
                _generate(backend, action_prompt(sim, template, refl), cfg.max_tokens)
            )
            if not pending:
                raise BackendError("world model predicted an empty action")
    except BackendError as exc:
        log.warning("rollout for %r cut short: %s", action, exc)
        return RolloutTrajectory(tuple(steps), Termination.DEPTH_LIMIT, warning=str(exc))
    return RolloutTrajectory(tuple(steps), Termination.DEPTH_LIMIT)
