import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from lac.backends import Rule, ScriptedBackend
from lac.core import EPS_FLOOR, Goal, History, OutcomeBelief, Reflection, RolloutTrajectory, Step, Termination
from lac.critic import (
    CriticUnavailable,
    MarkerPair,
    logit,
    outcome_belief,
    parse_probability,
    q_direct_eval,
    q_value,
    q_variant_logpw,
    q_with_rollout,
    sigmoid,
)


def markers_backend(probs):
    return ScriptedBackend([Rule(".", next_tokens=probs)])


def test_belief_normalizes_raw_pair():
    b = outcome_belief("This step is ", MarkerPair(), markers_backend({"GOOD": 0.03, "BAD": 0.01}))
    assert (b.p_success, b.p_failure) == pytest.approx((0.75, 0.25))
    assert (b.raw_success, b.raw_failure) == (0.03, 0.01)


def test_equal_markers_give_half():
    b = outcome_belief("x", MarkerPair(), markers_backend({"GOOD": 0.2, "BAD": 0.2}))
    assert (b.p_success, b.p_failure) == (0.5, 0.5)


def test_absent_marker_gets_floor():
    b = outcome_belief("x", MarkerPair(), markers_backend({"GOOD": 0.4}))
    assert b.raw_failure == EPS_FLOOR
    assert q_value(b) == pytest.approx(math.log(0.4 / EPS_FLOOR))


def test_unsupported_backend_means_critic_unavailable():
    class NoLogprobs:
        def next_token_probs(self, q):
            from lac.backends import UnsupportedCapability

            raise UnsupportedCapability("nope")

    with pytest.raises(CriticUnavailable):
        outcome_belief("x", MarkerPair(), NoLogprobs())


def test_marker_pair_validation_and_swap():
    with pytest.raises(ValueError):
        MarkerPair("GOOD", " good ")
    assert MarkerPair("SUCCESS", "FAILURE").swapped() == MarkerPair("FAILURE", "SUCCESS")


def test_q_value_examples():
    assert q_value(OutcomeBelief(0.5, 0.5)) == 0.0
    assert q_value(OutcomeBelief(0.8, 0.2)) == pytest.approx(1.386294, abs=1e-6)
    b = sigmoid(2.0)
    assert b.p_success == pytest.approx(0.880797, abs=1e-6)
    assert q_value(b) == pytest.approx(2.0, abs=1e-12)


@given(st.floats(-30, 30))
def test_sigmoid_logit_round_trip(q):
    assert abs(logit(sigmoid(q)) - q) <= 1e-9


@given(st.floats(1e-6, 1 - 1e-6))
def test_logit_then_sigmoid_on_simplex(p):
    b = OutcomeBelief(p, 1 - p) if abs(p + (1 - p) - 1) < 1e-12 else None
    assert sigmoid(logit(b)).p_success == pytest.approx(p, abs=1e-12)


@given(st.floats(1e-8, 1.0), st.floats(1e-8, 1.0), st.sampled_from([1e-6, 1.0, 1e6]))
def test_scale_invariance(pw, pl, c):
    base = q_value(OutcomeBelief.from_raw(pw, pl))
    assert q_value(OutcomeBelief.from_raw(c * pw, c * pl)) == pytest.approx(base, abs=1e-12)


@given(st.floats(0.001, 0.999), st.floats(0.001, 0.999))
def test_swapping_markers_negates_q(pw, pl):
    back = markers_backend({"GOOD": pw, "BAD": pl})
    q = q_value(outcome_belief("x", MarkerPair(), back))
    q_swapped = q_value(outcome_belief("x", MarkerPair().swapped(), back))
    assert q_swapped == -q


def test_q_variant_values_and_ranking_divergence():
    assert q_variant_logpw(OutcomeBelief(0.5, 0.5)) == pytest.approx(-0.693147, abs=1e-6)
    assert q_variant_logpw(OutcomeBelief(1 - 1e-9, 1e-9)) == pytest.approx(0.0, abs=1e-8)
    first, second = OutcomeBelief.from_raw(0.4, 0.1), OutcomeBelief.from_raw(0.5, 0.4)
    assert q_value(first) > q_value(second)
    assert q_variant_logpw(second) > q_variant_logpw(first)


def test_q_with_rollout_reads_final_judgment_position():
    seen = []

    class Recorder:
        def next_token_probs(self, q):
            seen.append(q.prompt)
            return [("GOOD", 0.6), ("BAD", 0.2)]

    h = History(Goal("go to the red ball"), "start")
    step = Step("go forward", "near", Reflection.parse("Closer. This step is GOOD."))
    belief, q = q_with_rollout(h, "go forward", RolloutTrajectory((step,), Termination.GOOD), MarkerPair(), Recorder())
    assert seen[0].endswith("Critic:Closer. This step is ")
    assert q == pytest.approx(math.log(3))
    _, q0 = q_with_rollout(h, "go forward", RolloutTrajectory(), MarkerPair(), Recorder())
    assert seen[1].endswith("Action:go forward\nCritic:This step is ")


@pytest.mark.parametrize("text, p", [("0.9", 0.9), (" 0.25 maybe", 0.25), ("85%", 0.85), ("1", 1.0),
                                     ("maybe", None), ("1.7", None)])
def test_parse_probability(text, p):
    got = parse_probability(text)
    assert got == (pytest.approx(p) if p is not None else None)


@pytest.mark.parametrize("text, q", [("0.9", math.log(9)), ("0.5", 0.0), ("maybe", 0.0), ("", 0.0)])
def test_direct_eval(text, q):
    assert q_direct_eval("p", ScriptedBackend([Rule(".", text)])) == pytest.approx(q, abs=1e-9)


def test_direct_eval_clamps_extremes():
    assert q_direct_eval("p", ScriptedBackend([Rule(".", "1.0")])) == pytest.approx(math.log(1 / EPS_FLOOR), rel=1e-6)
