"""Client for OpenAI-compatible ``/completions`` endpoints (vLLM, TGI, llama.cpp server...)."""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass
from typing import Any

import httpx

from lac.backends.base import (
    TOP_K,
    BackendError,
    GenerationRequest,
    GenerationResult,
    ProtocolError,
    TokenQuery,
    TransientBackendError,
    UnsupportedCapability,
    aggregate_variants,
    charge,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class HttpConfig:
    base_url: str
    model: str
    api_key: str | None = None
    timeout: float = 60.0
    retries: int = 2

    @classmethod
    def from_env(cls, **overrides) -> HttpConfig:
        values = {
            "base_url": os.environ.get("LAC_BACKEND_URL", "http://localhost:8000/v1"),
            "model": os.environ.get("LAC_MODEL", ""),
            "api_key": os.environ.get("LAC_API_KEY"),
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


class HttpBackend:
    def __init__(self, config: HttpConfig, client: httpx.Client | None = None):
        self.config = config
        headers = {"Authorization": f"Bearer {config.api_key}"} if config.api_key else {}
        self._client = client or httpx.Client(timeout=config.timeout, headers=headers)
        self._url = config.base_url.rstrip("/") + "/completions"

    def close(self) -> None:
        self._client.close()

    def _post(self, payload: dict[str, Any]) -> dict[str, Any]:
        payload = {"model": self.config.model, **payload}
        last: Exception | None = None
        for attempt in range(self.config.retries + 1):
            try:
                resp = self._client.post(self._url, json=payload)
            except httpx.TransportError as exc:
                last = exc
                log.warning("completions request failed (attempt %d): %s", attempt + 1, exc)
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last = TransientBackendError(f"HTTP {resp.status_code}")
                log.warning("completions returned HTTP %d (attempt %d)", resp.status_code, attempt + 1)
                continue
            if resp.status_code >= 400:
                raise BackendError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                body = resp.json()
            except ValueError as exc:
                raise ProtocolError("response is not JSON") from exc
            usage = body.get("usage") or {}
            if isinstance(usage.get("total_tokens"), int):
                charge(usage["total_tokens"])
            return body
        raise TransientBackendError(f"completions request failed after retries: {last}")

    @staticmethod
    def _choice(body: dict[str, Any]) -> dict[str, Any]:
        try:
            choice = body["choices"][0]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProtocolError("response has no choices") from exc
        if not isinstance(choice, dict) or not isinstance(choice.get("text", ""), str):
            raise ProtocolError("malformed choice")
        return choice

    @staticmethod
    def _logprobs(choice: dict[str, Any]) -> dict[str, Any]:
        lp = choice.get("logprobs")
        if not lp or not lp.get("tokens"):
            raise UnsupportedCapability("backend returned no logprob data")
        return lp

    def generate(self, req: GenerationRequest) -> GenerationResult:
        body = self._post(
            {
                "prompt": req.prompt,
                "max_tokens": req.max_tokens,
                "temperature": req.temperature,
                "stop": list(req.stop),
                "logprobs": 1,
            }
        )
        choice = self._choice(body)
        lp = choice.get("logprobs") or {}
        logprobs = tuple(float(x) for x in (lp.get("token_logprobs") or []) if x is not None)
        usage = body.get("usage") or {}
        total = usage.get("total_tokens")
        if not isinstance(total, int):
            total = len(logprobs)
        return GenerationResult(text=choice.get("text", ""), token_logprobs=logprobs, total_tokens=total)

    def score_continuation(self, prompt: str, continuation: str) -> float:
        """Echo-score ``prompt + continuation`` and sum logprobs of the continuation.

        A token straddling the prompt/continuation boundary is counted with
        the continuation.
        """
        if not continuation:
            raise ValueError("continuation must be non-empty")
        full = prompt + continuation
        body = self._post(
            {"prompt": full, "max_tokens": 1, "temperature": 0.0, "logprobs": 1, "echo": True}
        )
        try:
            lp = self._logprobs(self._choice(body))
        except UnsupportedCapability as exc:
            raise UnsupportedCapability("backend cannot echo-score continuations") from exc
        tokens = lp["tokens"]
        values = lp.get("token_logprobs") or []
        offsets = lp.get("text_offset")
        if not offsets or len(offsets) != len(tokens):
            offsets, pos = [], 0
            for t in tokens:
                offsets.append(pos)
                pos += len(t)
        total = 0.0
        for tok, start, value in zip(tokens, offsets, values):
            end = start + len(tok)
            if end <= len(prompt) or start >= len(full):
                continue
            if value is None:
                raise ProtocolError("missing logprob inside the scored continuation")
            total += float(value)
        return min(total, 0.0)

    def _top_alternatives(self, prompt: str, k: int) -> list[tuple[str, float]]:
        body = self._post(
            {"prompt": prompt, "max_tokens": 1, "temperature": 0.0, "logprobs": k}
        )
        lp = self._logprobs(self._choice(body))
        top = lp.get("top_logprobs")
        if not top or not isinstance(top[0], dict):
            raise UnsupportedCapability("backend returned no top_logprobs")
        return [(tok, math.exp(float(v))) for tok, v in top[0].items()]

    def next_token_probs(self, q: TokenQuery) -> list[tuple[str, float]]:
        return aggregate_variants(self._top_alternatives(q.prompt, TOP_K), q.candidate_tokens)

    def top_next_tokens(self, prompt: str, k: int = TOP_K) -> list[tuple[str, float]]:
        alts = self._top_alternatives(prompt, k)
        return sorted(alts, key=lambda kv: -kv[1])[:k]
