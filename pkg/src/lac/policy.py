"""Gradient-free KL-constrained policy improvement over a candidate set.

Maximizing  E_pi[Q] - (1/alpha) KL(pi || prior)  over distributions on the
sampled candidates has the closed form  pi ∝ prior * exp(alpha * Q).
Everything here works in log space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from lac.core import CRITIC_ONLY, ImprovedDistribution


class ValidationError(ValueError):
    pass


@dataclass(frozen=True)
class ImprovementInput:
    prior_logprobs: tuple[float, ...]
    q_values: tuple[float, ...]
    alpha: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "prior_logprobs", tuple(float(x) for x in self.prior_logprobs))
        object.__setattr__(self, "q_values", tuple(float(x) for x in self.q_values))
        if not self.prior_logprobs or len(self.prior_logprobs) != len(self.q_values):
            raise ValidationError("prior_logprobs and q_values must have the same non-zero length")
        if not all(math.isfinite(x) for x in self.prior_logprobs + self.q_values):
            raise ValidationError("prior_logprobs and q_values must be finite")
        if math.isnan(self.alpha) or self.alpha < 0 or (math.isinf(self.alpha) and self.alpha != CRITIC_ONLY):
            raise ValidationError("alpha must be a non-negative real or CRITIC_ONLY")

    @property
    def critic_only(self) -> bool:
        return math.isinf(self.alpha)


def _first_argmax(values: Sequence[float]) -> int:
    best = 0
    for i, v in enumerate(values):
        if v > values[best]:
            best = i
    return best


def logsumexp(w: np.ndarray) -> float:
    m = float(np.max(w))
    return m + math.log(float(np.sum(np.exp(w - m))))


def improve(inp: ImprovementInput) -> ImprovedDistribution:
    if inp.critic_only:
        q = inp.q_values
        # highest q, then highest prior, then lowest index
        chosen = max(range(len(q)), key=lambda i: (q[i], inp.prior_logprobs[i], -i))
        probs = tuple(1.0 if i == chosen else 0.0 for i in range(len(q)))
        return ImprovedDistribution(probs, 0.0, CRITIC_ONLY, chosen)

    w = np.asarray(inp.prior_logprobs) + inp.alpha * np.asarray(inp.q_values)
    log_z = logsumexp(w)
    probs = np.exp(w - log_z)
    probs = probs / probs.sum()
    # argmax on the log-weights: Z cancels, and exact ties stay exact
    chosen = _first_argmax(list(w))
    return ImprovedDistribution(tuple(float(p) for p in probs), log_z, inp.alpha, chosen)


def objective_value(probs: Sequence[float], inp: ImprovementInput) -> float:
    """E_p[Q] - (1/alpha) KL(p || prior), prior renormalized over the candidates."""
    p = np.asarray(probs, dtype=float)
    if p.shape != (len(inp.q_values),):
        raise ValidationError("probs must have one entry per candidate")
    if np.any(p < 0) or abs(float(p.sum()) - 1.0) > 1e-9:
        raise ValidationError("probs must be a distribution summing to 1")
    q = np.asarray(inp.q_values)
    log_prior = np.asarray(inp.prior_logprobs)
    log_prior = log_prior - logsumexp(log_prior)
    expected = float(p @ q)
    if inp.critic_only:
        return expected
    pos = p > 0
    kl = float(np.sum(p[pos] * (np.log(p[pos]) - log_prior[pos])))
    if inp.alpha == 0:
        return expected if kl <= 1e-12 else -math.inf
    return expected - kl / inp.alpha


def objective_values(points: np.ndarray, inp: ImprovementInput) -> np.ndarray:
    """Vectorized ``objective_value`` over the rows of ``points``."""
    q = np.asarray(inp.q_values)
    log_prior = np.asarray(inp.prior_logprobs)
    log_prior = log_prior - logsumexp(log_prior)
    expected = points @ q
    if inp.critic_only:
        return expected
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(points > 0, points * (np.log(points) - log_prior), 0.0)
    kl = terms.sum(axis=1)
    if inp.alpha == 0:
        return np.where(kl <= 1e-12, expected, -np.inf)
    return expected - kl / inp.alpha


def select_action(dist: ImprovedDistribution, candidates: Sequence) -> str:
    if len(dist.candidate_probs) != len(candidates):
        raise ValidationError("distribution does not match candidates")
    c = candidates[dist.chosen_index]
    return c if isinstance(c, str) else c.action
