"""Table-driven backend for tests, demos and offline scenarios.

A scripted backend is an ordered list of rules. Each rule carries a regular
expression searched against the prompt; the first rule that matches answers
the query. Tokens are whitespace-delimited words (leading whitespace stays
attached to the word that follows it).
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from lac.backends.base import (
    TOP_K,
    BackendError,
    GenerationRequest,
    GenerationResult,
    TokenQuery,
    aggregate_variants,
    apply_stop,
    charge,
    rough_token_count,
)

_TOKEN_RE = re.compile(r"\s*\S+")


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text)


@dataclass(frozen=True)
class Rule:
    """One scripted response.

    Attributes:
        pattern: regex searched (DOTALL) against the prompt.
        text: what ``generate`` returns.
        next_tokens: next-token distribution at the end of the prompt.
        token_probs: per-token probability used to score continuations,
            keyed by the stripped token text.
        default_token_prob: probability of tokens missing from ``token_probs``.
        continuations: whole-continuation probabilities; take precedence
            over token-wise scoring when the continuation matches exactly.
    """

    pattern: str
    text: str = ""
    next_tokens: Mapping[str, float] = field(default_factory=dict)
    token_probs: Mapping[str, float] = field(default_factory=dict)
    default_token_prob: float = 1.0
    continuations: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "_regex", re.compile(self.pattern, re.DOTALL))

    def matches(self, prompt: str) -> bool:
        return self._regex.search(prompt) is not None

    def token_logprob(self, token: str) -> float:
        p = self.token_probs.get(token.strip(), self.default_token_prob)
        return math.log(p) if p > 0 else -math.inf

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> Rule:
        return cls(
            pattern=d["pattern"],
            text=d.get("text", ""),
            next_tokens=dict(d.get("next_tokens", {})),
            token_probs=dict(d.get("token_probs", {})),
            default_token_prob=float(d.get("default_token_prob", 1.0)),
            continuations=dict(d.get("continuations", {})),
        )


class ScriptedBackend:
    """Backend whose every answer is a pure function of (rules, request)."""

    def __init__(self, rules):
        self.rules = tuple(rules)

    @classmethod
    def from_json(cls, path: str | Path) -> ScriptedBackend:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        rules = data["rules"] if isinstance(data, dict) else data
        return cls(Rule.from_dict(r) for r in rules)

    def _rule(self, prompt: str) -> Rule:
        for rule in self.rules:
            if rule.matches(prompt):
                return rule
        raise BackendError(f"no scripted rule matches prompt ending {prompt[-60:]!r}")

    def generate(self, req: GenerationRequest) -> GenerationResult:
        rule = self._rule(req.prompt)
        text = apply_stop(rule.text, req.stop)
        tokens = tokenize(text)
        if len(tokens) > req.max_tokens:
            tokens = tokens[: req.max_tokens]
            text = "".join(tokens)
        logprobs = tuple(rule.token_logprob(t) for t in tokens)
        total = rough_token_count(req.prompt) + len(tokens)
        charge(total)
        return GenerationResult(text=text, token_logprobs=logprobs, total_tokens=total)

    def score_continuation(self, prompt: str, continuation: str) -> float:
        if not continuation:
            raise ValueError("continuation must be non-empty")
        rule = self._rule(prompt)
        charge(rough_token_count(prompt) + rough_token_count(continuation))
        if continuation in rule.continuations:
            return math.log(rule.continuations[continuation])
        return sum(rule.token_logprob(t) for t in tokenize(continuation))

    def next_token_probs(self, q: TokenQuery) -> list[tuple[str, float]]:
        rule = self._rule(q.prompt)
        charge(rough_token_count(q.prompt) + 1)
        return aggregate_variants(rule.next_tokens.items(), q.candidate_tokens)

    def top_next_tokens(self, prompt: str, k: int = TOP_K) -> list[tuple[str, float]]:
        rule = self._rule(prompt)
        charge(rough_token_count(prompt) + 1)
        ranked = sorted(rule.next_tokens.items(), key=lambda kv: -kv[1])
        return ranked[:k]
