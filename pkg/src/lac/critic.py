"""Action values from the model's belief in success versus failure.

Q(g, h, a, u) = ln P(success | ...) - ln P(failure | ...), read off the
next-token probabilities of a positive/negative marker word placed where a
reflection would state its verdict.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass

from lac.backends.base import (
    Backend,
    GenerationRequest,
    TokenQuery,
    UnsupportedCapability,
    normalize_token,
)
from lac.core import (
    DEFAULT_TEMPLATE,
    EPS_FLOOR,
    History,
    OutcomeBelief,
    PromptTemplate,
    RolloutTrajectory,
    direct_eval_prompt,
    judgment_prompt,
)

log = logging.getLogger(__name__)


class CriticUnavailable(RuntimeError):
    """The backend cannot provide marker-token probabilities."""


@dataclass(frozen=True)
class MarkerPair:
    positive: str = "GOOD"
    negative: str = "BAD"

    def __post_init__(self):
        if normalize_token(self.positive) == normalize_token(self.negative):
            raise ValueError("positive and negative markers must differ")

    def swapped(self) -> MarkerPair:
        return MarkerPair(self.negative, self.positive)


def sigmoid(q: float) -> OutcomeBelief:
    """Success/failure pair implied by a Q-value through the logistic link.

    Both members are computed directly (rather than one as ``1 - other``)
    so the pair stays accurate far into the tails.
    """
    if q >= 0:
        e = math.exp(-q)
        p_s, p_f = 1.0 / (1.0 + e), e / (1.0 + e)
    else:
        e = math.exp(q)
        p_s, p_f = e / (1.0 + e), 1.0 / (1.0 + e)
    return OutcomeBelief(p_s, p_f)


def logit(belief: OutcomeBelief) -> float:
    return math.log(belief.p_success) - math.log(belief.p_failure)


def q_value(belief: OutcomeBelief) -> float:
    return logit(belief)


def q_variant_logpw(belief: OutcomeBelief) -> float:
    """ln P(success) alone, using the raw marker mass.

    On the normalized pair this would be ln sigmoid(Q), a monotone function
    of Q, and could never rank candidates differently.
    """
    return math.log(belief.raw_success)


def outcome_belief(context_prompt: str, markers: MarkerPair, backend: Backend) -> OutcomeBelief:
    try:
        probs = backend.next_token_probs(
            TokenQuery(context_prompt, (markers.positive, markers.negative))
        )
    except UnsupportedCapability as exc:
        raise CriticUnavailable(str(exc)) from exc
    table = {normalize_token(tok): p for tok, p in probs}
    p_w = max(table.get(normalize_token(markers.positive), 0.0), EPS_FLOOR)
    p_l = max(table.get(normalize_token(markers.negative), 0.0), EPS_FLOOR)
    return OutcomeBelief.from_raw(p_w, p_l)


def q_with_rollout(
    history: History,
    action: str,
    rollout: RolloutTrajectory | None,
    markers: MarkerPair,
    backend: Backend,
    template: PromptTemplate = DEFAULT_TEMPLATE,
    include_reflections: bool = True,
) -> tuple[OutcomeBelief, float]:
    prompt = judgment_prompt(history, action, rollout, template, include_reflections)
    belief = outcome_belief(prompt, markers, backend)
    return belief, q_value(belief)


_NUMBER_RE = re.compile(r"[-+]?(?:\d+\.\d*|\.\d+|\d+)(%?)")


def parse_probability(text: str) -> float | None:
    m = _NUMBER_RE.search(text)
    if not m:
        return None
    value = float(m.group(0).rstrip("%"))
    if m.group(1):
        value /= 100.0
    return value if 0.0 <= value <= 1.0 else None


def q_direct_eval(context_prompt: str, backend: Backend) -> float:
    """Ask for a success probability in plain text and convert it to log-odds.

    Output that does not parse as a probability counts as 0.5 (Q = 0).
    """
    result = backend.generate(GenerationRequest(context_prompt, max_tokens=8))
    p = parse_probability(result.text)
    if p is None:
        log.info("direct evaluation output not a probability: %r", result.text)
        p = 0.5
    p = min(max(p, EPS_FLOOR), 1.0 - EPS_FLOOR)
    return math.log(p) - math.log1p(-p)


def q_direct_eval_with_rollout(
    history, action, rollout, backend, template=DEFAULT_TEMPLATE, include_reflections=True
) -> float:
    return q_direct_eval(
        direct_eval_prompt(history, action, rollout, template, include_reflections), backend
    )
