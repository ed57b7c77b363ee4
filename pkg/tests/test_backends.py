import math
import threading
from concurrent.futures import ThreadPoolExecutor

import pytest
from hypothesis import given
from hypothesis import strategies as st

from lac.backends import (
    Backend,
    BackendError,
    GenerationRequest,
    Rule,
    ScriptedBackend,
    TokenQuery,
    token_meter,
)
from lac.backends.base import EPS_FLOOR, aggregate_variants, apply_stop, charge
from lac.backends.scripted import tokenize


def test_generation_request_validation():
    with pytest.raises(ValueError):
        GenerationRequest("p", max_tokens=0)
    with pytest.raises(ValueError):
        GenerationRequest("")
    with pytest.raises(ValueError):
        GenerationRequest("p", temperature=-1)


def test_token_query_rejects_colliding_candidates():
    with pytest.raises(ValueError):
        TokenQuery("p", ("GOOD", " good"))
    with pytest.raises(ValueError):
        TokenQuery("p", ())


def test_scripted_generate_lookup_and_determinism():
    b = ScriptedBackend([Rule(r"Action:$", "turn left")])
    req = GenerationRequest("Goal of the agent: x\nAction:")
    assert b.generate(req).text == "turn left"
    assert b.generate(req) == b.generate(req)
    assert isinstance(b, Backend)


def test_scripted_stop_and_truncation():
    b = ScriptedBackend([Rule(".", "first line\nsecond line")])
    assert "\n" not in b.generate(GenerationRequest("p", stop=("\n",))).text
    assert b.generate(GenerationRequest("p", max_tokens=1, stop=())).text == "first"


def test_unmatched_prompt_is_backend_error():
    with pytest.raises(BackendError):
        ScriptedBackend([Rule("never", "x")]).generate(GenerationRequest("p"))


def test_score_two_half_tokens():
    b = ScriptedBackend([Rule(".", default_token_prob=0.5)])
    assert b.score_continuation("p", "go forward") == pytest.approx(math.log(0.25))
    assert b.score_continuation("p", "go forward") == pytest.approx(-1.386294, abs=1e-6)


def test_score_certain_tokens_is_zero():
    assert ScriptedBackend([Rule(".")]).score_continuation("p", "a b c") == 0.0


def test_score_requires_continuation():
    with pytest.raises(ValueError):
        ScriptedBackend([Rule(".")]).score_continuation("p", "")


@given(st.lists(st.sampled_from(["go", "to", "the", "red", "ball"]), min_size=2, max_size=6),
       st.integers(min_value=1, max_value=5))
def test_score_chain_rule(words, cut):
    cut = min(cut, len(words) - 1)
    b = ScriptedBackend([Rule(".", token_probs={"go": 0.5, "to": 0.9, "the": 0.8, "red": 0.3}, default_token_prob=0.6)])
    a = " " + " ".join(words[:cut])
    rest = " " + " ".join(words[cut:])
    whole = b.score_continuation("p", a + rest)
    assert whole == pytest.approx(b.score_continuation("p", a) + b.score_continuation("p" + a, rest), abs=1e-12)


def test_next_token_probs_lookup_and_floor():
    b = ScriptedBackend([Rule(".", next_tokens={"GOOD": 0.6, "BAD": 0.2})])
    assert b.next_token_probs(TokenQuery("p", ("GOOD", "BAD"))) == [("GOOD", 0.6), ("BAD", 0.2)]
    assert dict(b.next_token_probs(TokenQuery("p", ("SUCCESS",))))["SUCCESS"] == EPS_FLOOR


def test_aggregate_variants_sums_case_and_space_variants():
    got = dict(aggregate_variants([(" GOOD", 0.3), ("GOOD", 0.1), ("good", 0.05), ("BAD", 0.2)], ["GOOD", "BAD", "x"]))
    assert got["GOOD"] == pytest.approx(0.45)
    assert got["BAD"] == pytest.approx(0.2)
    assert got["x"] == EPS_FLOOR


def test_top_next_tokens_sorted():
    b = ScriptedBackend([Rule(".", next_tokens={"a": 0.1, "b": 0.7, "c": 0.2})])
    assert [t for t, _ in b.top_next_tokens("p", k=2)] == ["b", "c"]


def test_apply_stop_and_tokenize():
    assert apply_stop("abc\ndef", ["\n"]) == "abc"
    assert apply_stop("abcSTOPx", ["X", "STOP"]) == "abc"
    assert tokenize(" go  forward") == [" go", "  forward"]


def test_rules_from_json(tmp_path):
    path = tmp_path / "rules.json"
    path.write_text('{"rules": [{"pattern": "Action:$", "text": "drop", "continuations": {"drop": 0.25}}]}')
    b = ScriptedBackend.from_json(path)
    assert b.generate(GenerationRequest("x\nAction:")).text == "drop"
    assert b.score_continuation("x\nAction:", "drop") == pytest.approx(math.log(0.25))


def test_token_meter_counts_per_context_and_threads():
    b = ScriptedBackend([Rule(".", "one two")])
    with token_meter() as m:
        b.generate(GenerationRequest("a b c"))
    assert m.tokens == 5 and m.calls == 1
    charge(100)  # no meter active: ignored

    with token_meter() as m:
        lock = threading.Lock()
        with ThreadPoolExecutor(4) as pool:
            import contextvars

            futures = [pool.submit(contextvars.copy_context().run, b.generate, GenerationRequest("x")) for _ in range(20)]
            for f in futures:
                f.result()
    assert m.calls == 20 and m.tokens == 60
