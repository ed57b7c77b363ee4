"""Backend interface: generation, continuation scoring and next-token probabilities."""

from __future__ import annotations

import contextlib
import contextvars
import threading
from dataclasses import dataclass, field
from typing import Iterable, Protocol, runtime_checkable

from lac.core import EPS_FLOOR

TOP_K = 20


class BackendError(RuntimeError):
    """Base class for all backend failures."""


class TransientBackendError(BackendError):
    """Transport-level failure; the request may succeed if retried."""


class ProtocolError(BackendError):
    """The backend answered with something that does not parse."""


class UnsupportedCapability(BackendError):
    """The backend cannot serve this kind of query (e.g. no logprobs)."""


@dataclass(frozen=True)
class GenerationRequest:
    prompt: str
    max_tokens: int = 64
    temperature: float = 0.0
    stop: tuple[str, ...] = ("\n",)

    def __post_init__(self):
        if not self.prompt:
            raise ValueError("prompt must be non-empty")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


@dataclass(frozen=True)
class GenerationResult:
    text: str
    token_logprobs: tuple[float, ...] = ()
    total_tokens: int = 0


@dataclass(frozen=True)
class TokenQuery:
    prompt: str
    candidate_tokens: tuple[str, ...]

    def __post_init__(self):
        if not self.candidate_tokens:
            raise ValueError("candidate_tokens must be non-empty")
        keys = [normalize_token(t) for t in self.candidate_tokens]
        if len(set(keys)) != len(keys):
            raise ValueError("candidate tokens collide after normalization")


@runtime_checkable
class Backend(Protocol):
    def generate(self, req: GenerationRequest) -> GenerationResult: ...

    def score_continuation(self, prompt: str, continuation: str) -> float: ...

    def next_token_probs(self, q: TokenQuery) -> list[tuple[str, float]]: ...

    def top_next_tokens(self, prompt: str, k: int = TOP_K) -> list[tuple[str, float]]: ...


def normalize_token(text: str) -> str:
    return text.strip().casefold()


def aggregate_variants(
    alternatives: Iterable[tuple[str, float]], candidates: Iterable[str]
) -> list[tuple[str, float]]:
    """Sum the probability of every alternative whose trimmed, case-folded text
    equals a candidate; candidates that never appear get ``EPS_FLOOR``."""
    mass: dict[str, float] = {}
    for tok, p in alternatives:
        key = normalize_token(tok)
        mass[key] = mass.get(key, 0.0) + p
    out = []
    for cand in candidates:
        p = mass.get(normalize_token(cand), 0.0)
        out.append((cand, min(1.0, p) if p > 0 else EPS_FLOOR))
    return out


def apply_stop(text: str, stop: Iterable[str]) -> str:
    cut = len(text)
    for s in stop:
        if s:
            i = text.find(s)
            if i != -1:
                cut = min(cut, i)
    return text[:cut]


# --------------------------------------------------------------------------
# token accounting


@dataclass
class TokenMeter:
    tokens: int = 0
    calls: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def charge(self, n: int) -> None:
        with self._lock:
            self.tokens += n
            self.calls += 1


_meter: contextvars.ContextVar[TokenMeter | None] = contextvars.ContextVar(
    "lac_token_meter", default=None
)


@contextlib.contextmanager
def token_meter():
    """Collect token usage of every backend call made inside the block.

    Work handed to other threads must run in a copy of this context
    (``contextvars.copy_context().run``) to be counted.
    """
    meter = TokenMeter()
    reset = _meter.set(meter)
    try:
        yield meter
    finally:
        _meter.reset(reset)


def charge(n: int) -> None:
    meter = _meter.get()
    if meter is not None:
        meter.charge(n)


def rough_token_count(text: str) -> int:
    # whitespace words; local backends have no tokenizer
    return len(text.split())
