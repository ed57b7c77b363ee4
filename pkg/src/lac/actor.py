"""Prior policy: propose distinct candidate actions and score them."""

from __future__ import annotations

from dataclasses import dataclass

from lac.backends.base import TOP_K, Backend, GenerationRequest
from lac.core import DEFAULT_TEMPLATE, History, PromptTemplate, action_prompt, normalize_action


class ActorExhausted(RuntimeError):
    """The backend produced no usable action."""


@dataclass(frozen=True)
class ActorConfig:
    num_candidates: int = 5
    max_action_tokens: int = 32
    max_resample_attempts: int = 10

    def __post_init__(self):
        if self.num_candidates < 1:
            raise ValueError("num_candidates must be >= 1")
        if self.max_action_tokens < 1 or self.max_resample_attempts < 1:
            raise ValueError("max_action_tokens and max_resample_attempts must be >= 1")


def action_logprob(
    history: History,
    action: str,
    backend: Backend,
    template: PromptTemplate = DEFAULT_TEMPLATE,
    include_reflections: bool = True,
) -> float:
    if not action:
        raise ValueError("action must be non-empty")
    return backend.score_continuation(action_prompt(history, template, include_reflections), action)


def sample_candidates(
    history: History,
    cfg: ActorConfig,
    backend: Backend,
    template: PromptTemplate = DEFAULT_TEMPLATE,
    include_reflections: bool = True,
) -> list[tuple[str, float]]:
    """Up to ``cfg.num_candidates`` distinct actions with their prior log-probabilities.

    Sampling is deterministic: the greedy action comes first, then each
    high-probability alternative first token is completed greedily.
    Results are sorted by prior log-probability, highest first.
    """
    prompt = action_prompt(history, template, include_reflections)

    def complete(prefix: str) -> str:
        req = GenerationRequest(prompt + prefix, max_tokens=cfg.max_action_tokens, stop=("\n",))
        return normalize_action(prefix + backend.generate(req).text)

    actions: list[str] = []
    greedy = complete("")
    if greedy:
        actions.append(greedy)

    attempts = 0
    if len(actions) < cfg.num_candidates:
        for token, _ in backend.top_next_tokens(prompt, max(TOP_K, cfg.num_candidates)):
            if len(actions) >= cfg.num_candidates or attempts >= cfg.max_resample_attempts:
                break
            if not token.strip():
                continue
            attempts += 1
            action = complete(token.lstrip())
            if action and action not in actions:
                actions.append(action)

    if not actions:
        raise ActorExhausted("backend produced no candidate action")

    scored = [(a, backend.score_continuation(prompt, a)) for a in actions]
    # stable sort keeps generation order on equal scores
    return sorted(scored, key=lambda item: -item[1])
