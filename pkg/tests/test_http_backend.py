import json
import math

import httpx
import pytest

from lac.backends.base import (
    EPS_FLOOR,
    BackendError,
    GenerationRequest,
    ProtocolError,
    TokenQuery,
    TransientBackendError,
    UnsupportedCapability,
    token_meter,
)
from lac.backends.http import HttpBackend, HttpConfig


def make(handler, retries=1):
    client = httpx.Client(transport=httpx.MockTransport(handler))
    return HttpBackend(HttpConfig("http://llm.test/v1", "m", api_key="k", retries=retries), client)


def ok(body):
    return httpx.Response(200, json=body)


def test_generate_posts_completions_payload():
    seen = {}

    def handler(request):
        seen["url"] = str(request.url)
        seen["body"] = json.loads(request.content)
        return ok({"choices": [{"text": "turn left", "logprobs": {"tokens": ["turn", " left"],
                   "token_logprobs": [-0.1, -0.2]}}], "usage": {"total_tokens": 12}})

    b = make(handler)
    with token_meter() as m:
        res = b.generate(GenerationRequest("prompt", max_tokens=8, stop=("\n",)))
    assert res.text == "turn left" and res.token_logprobs == (-0.1, -0.2) and res.total_tokens == 12
    assert seen["url"] == "http://llm.test/v1/completions"
    assert seen["body"] == {"model": "m", "prompt": "prompt", "max_tokens": 8, "temperature": 0.0,
                            "stop": ["\n"], "logprobs": 1}
    assert m.tokens == 12


def test_score_continuation_uses_echo_offsets():
    prompt, cont = "Action:", "go forward"

    def handler(request):
        body = json.loads(request.content)
        assert body["echo"] is True and body["prompt"] == prompt + cont
        return ok({"choices": [{"text": "", "logprobs": {
            "tokens": ["Action", ":", "go", " forward", "\n"],
            "token_logprobs": [None, -1.0, -0.5, -0.25, -3.0],
            "text_offset": [0, 6, 7, 9, 17]}}]})

    assert make(handler).score_continuation(prompt, cont) == pytest.approx(-0.75)


def test_score_continuation_without_logprobs_is_unsupported():
    b = make(lambda r: ok({"choices": [{"text": "x"}]}))
    with pytest.raises(UnsupportedCapability):
        b.score_continuation("p", "c")


def test_next_token_probs_sums_variants_and_floors():
    def handler(request):
        assert json.loads(request.content)["logprobs"] == 20
        return ok({"choices": [{"text": " GOOD", "logprobs": {"tokens": [" GOOD"], "token_logprobs": [-1.2],
                   "top_logprobs": [{" GOOD": math.log(0.3), "GOOD": math.log(0.1), " maybe": math.log(0.2)}]}}]})

    got = dict(make(handler).next_token_probs(TokenQuery("p", ("GOOD", "BAD"))))
    assert got["GOOD"] == pytest.approx(0.4)
    assert got["BAD"] == EPS_FLOOR


def test_missing_top_logprobs_is_unsupported():
    b = make(lambda r: ok({"choices": [{"text": "x", "logprobs": {"tokens": ["x"], "token_logprobs": [-1]}}]}))
    with pytest.raises(UnsupportedCapability):
        b.next_token_probs(TokenQuery("p", ("GOOD", "BAD")))


def test_server_errors_retry_then_transient():
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(503)

    with pytest.raises(TransientBackendError):
        make(handler, retries=2).generate(GenerationRequest("p"))
    assert len(calls) == 3


def test_transport_error_is_transient():
    def handler(request):
        raise httpx.ConnectError("down")

    with pytest.raises(TransientBackendError):
        make(handler).generate(GenerationRequest("p"))


def test_retry_recovers():
    state = {"n": 0}

    def handler(request):
        state["n"] += 1
        if state["n"] == 1:
            return httpx.Response(429)
        return ok({"choices": [{"text": "ok"}]})

    assert make(handler).generate(GenerationRequest("p")).text == "ok"


def test_client_error_and_malformed_body():
    with pytest.raises(BackendError):
        make(lambda r: httpx.Response(400, text="bad")).generate(GenerationRequest("p"))
    with pytest.raises(ProtocolError):
        make(lambda r: httpx.Response(200, text="not json")).generate(GenerationRequest("p"))
    with pytest.raises(ProtocolError):
        make(lambda r: ok({"choices": []})).generate(GenerationRequest("p"))


def test_config_from_env(monkeypatch):
    monkeypatch.setenv("LAC_BACKEND_URL", "http://x/v1")
    monkeypatch.setenv("LAC_MODEL", "tiny")
    monkeypatch.setenv("LAC_API_KEY", "secret")
    cfg = HttpConfig.from_env(timeout=5)
    assert (cfg.base_url, cfg.model, cfg.api_key, cfg.timeout) == ("http://x/v1", "tiny", "secret", 5)
