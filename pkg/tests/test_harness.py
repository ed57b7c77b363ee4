import json
import math

import pytest

from lac.backends import Rule, ScriptedBackend, TransientBackendError
from lac.core import CRITIC_ONLY, ConfigurationError, Step
from lac.demo import demo_backend, demo_history
from lac.gridworld import GridWorldEnv
from lac.gridworld.env import distance, reset
from lac.gridworld.oracle import OracleBackend
from lac.harness import (
    EngineConfig,
    RunManifest,
    TaskSet,
    backend_factory,
    decide_step,
    format_summary,
    make_env,
    run_batch,
    run_episode,
    summarize,
)

from helpers import turn_left_backend, unreachable_by_turning


def test_config_defaults_and_labels():
    cfg = EngineConfig()
    assert (cfg.horizon, cfg.num_candidates, cfg.label) == (30, 5, "full@alpha=1.0")
    assert EngineConfig(profile="alfworld").horizon == 40
    assert EngineConfig(mode="no-critic").effective_alpha == 0.0
    assert EngineConfig(mode="critic-only", alpha=0.3).effective_alpha == CRITIC_ONLY
    assert EngineConfig(alpha="critic_only").label == "full@alpha=critic_only"


@pytest.mark.parametrize("kwargs", [dict(alpha=-0.1), dict(alpha=math.nan), dict(horizon=0),
                                    dict(num_candidates=0), dict(profile="chess"), dict(mode="yolo")])
def test_config_rejects(kwargs):
    with pytest.raises(ConfigurationError):
        EngineConfig(**kwargs)


def test_config_dict_round_trip():
    cfg = EngineConfig(alpha=2.0, num_candidates=3, horizon=12, mode="no-rollout")
    assert EngineConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigurationError):
        EngineConfig.from_dict({"alhpa": 1})


def test_demo_decision():
    action, rec = decide_step(demo_history(), EngineConfig(alpha=1.0), demo_backend())
    assert action == "take saltshaker 1 from cabinet 2"
    assert [round(c.q_value, 9) for c in rec.candidates] == [-1.0, 2.0, 0.5, -0.5, 0.0]
    assert decide_step(demo_history(), EngineConfig(alpha=0.0), demo_backend())[0] == "go to drawer 1"


def test_no_critic_records_have_no_beliefs():
    _, rec = decide_step(demo_history(), EngineConfig(mode="no-critic"), demo_backend())
    assert all(c.belief is None and c.q_value == 0.0 for c in rec.candidates)


def test_no_rollout_uses_empty_trajectories():
    _, rec = decide_step(demo_history(), EngineConfig(mode="no-rollout"), demo_backend())
    assert all(not c.rollout.steps for c in rec.candidates)


def test_q_variant_scores_with_raw_success_mass():
    _, rec = decide_step(demo_history(), EngineConfig(mode="q-variant"), demo_backend())
    for c in rec.candidates:
        assert c.q_value == pytest.approx(math.log(c.belief.raw_success))
    # raw GOOD mass 0.1 * e^q, so the ranking matches the demo's Q ordering here
    assert rec.chosen.action == "take saltshaker 1 from cabinet 2"


def test_parallel_rollouts_match_serial():
    a = decide_step(demo_history(), EngineConfig(), demo_backend())[1]
    b = decide_step(demo_history(), EngineConfig(rollout_workers=4), demo_backend())[1]
    assert a.to_dict() == b.to_dict()


def test_oracle_episode_is_shortest():
    env = GridWorldEnv()
    _, _, state = reset(2, "PickUp")
    res = run_episode(env, EngineConfig(), OracleBackend(env), 2, "PickUp")
    assert res.success and res.reward == 1.0 and res.error is None
    assert res.steps_used == distance(state) == len(res.records)
    assert all(s.reflection is not None for s in res.history.steps)


def test_direct_eval_episode():
    env = GridWorldEnv()
    res = run_episode(env, EngineConfig(mode="direct-eval"), OracleBackend(env), 0, "GoTo")
    assert res.success


class CountingEnv(GridWorldEnv):
    def __init__(self):
        super().__init__()
        self.resets = 0

    def reset(self, seed, task="GoTo"):
        self.resets += 1
        return super().reset(seed, task)


@pytest.mark.parametrize("profile, horizon", [("babyai", 30), ("alfworld", 40)])
def test_horizon_is_exact_and_episode_runs_once(profile, horizon):
    seed = unreachable_by_turning()
    env = CountingEnv()
    res = run_episode(env, EngineConfig(profile=profile), turn_left_backend(), seed)
    assert not res.success and res.steps_used == horizon and res.error is None
    assert env.resets == 1


def test_backend_failure_ends_episode_without_restart():
    env = CountingEnv()
    res = run_episode(env, EngineConfig(), ScriptedBackend([]), 0)
    assert not res.success and res.steps_used == 0 and res.error
    assert env.resets == 1


def test_transient_error_is_retried_once():
    class Flaky(OracleBackend):
        failures = 1

        def top_next_tokens(self, prompt, k=5):
            if self.failures:
                self.failures -= 1
                raise TransientBackendError("blip")
            return super().top_next_tokens(prompt, k)

    env = GridWorldEnv()
    assert run_episode(env, EngineConfig(), Flaky(env), 0).success


def test_decide_step_refuses_past_horizon():
    h = demo_history().append(Step("look", "x"))
    with pytest.raises(ValueError):
        decide_step(h, EngineConfig(horizon=1), demo_backend())


def test_manifest_parsing(tmp_path):
    rules = tmp_path / "rules.json"
    rules.write_text(json.dumps([{"pattern": "x", "text": "y"}]))
    (tmp_path / "m.json").write_text(json.dumps({
        "tasks": [{"kind": "GoTo", "seeds": [0, 1]}],
        "configs": [{"alpha": 0}, {"mode": "no-critic"}],
        "backend": {"type": "scripted", "rules": "rules.json"},
        "output": "out",
    }))
    m = RunManifest.load(tmp_path / "m.json")
    assert [c.label for c in m.configs] == ["full@alpha=0.0", "no-critic"]
    assert m.backend["rules"] == str(rules.resolve())
    assert m.output == str(tmp_path / "out")


@pytest.mark.parametrize("data", [
    {"tasks": [{"kind": "GoTo", "seeds": [1, 1]}]},
    {"tasks": [{"kind": "GoTo"}]},
    {"configs": [{"alpha": 1}, {"alpha": 1.0}]},
    {"workers": 0},
    [],
])
def test_manifest_rejects(data):
    with pytest.raises(ConfigurationError):
        RunManifest.from_dict(data)


def test_factories_reject_unknown():
    with pytest.raises(ConfigurationError):
        make_env({"type": "mars"})
    with pytest.raises(ConfigurationError):
        make_env({"type": "subprocess"})
    with pytest.raises(ConfigurationError):
        backend_factory({"type": "psychic"})
    with pytest.raises(ConfigurationError):
        backend_factory({"type": "scripted"})


def test_run_batch_outputs_and_determinism(tmp_path):
    def manifest(out, workers):
        return RunManifest(
            (TaskSet("GoTo", (0, 1, 2)), TaskSet("PickUp", (0,))),
            (EngineConfig(), EngineConfig(mode="no-critic")),
            {"type": "oracle", "epsilon": 0.5},
            output=str(out), workers=workers,
        )

    rows = run_batch(manifest(tmp_path / "a", 1))
    run_batch(manifest(tmp_path / "b", 3))
    assert [r.episodes for r in rows] == [4, 4]
    assert (tmp_path / "a" / "episodes.jsonl").read_bytes() == (tmp_path / "b" / "episodes.jsonl").read_bytes()
    assert (tmp_path / "a" / "summary.csv").read_text().startswith("label,episodes,successes")
    assert json.loads((tmp_path / "a" / "summary.json").read_text())[0]["label"] == "full@alpha=1.0"


def test_summaries():
    assert summarize([], ["x"])[0].episodes == 0
    env = GridWorldEnv()
    res = run_episode(env, EngineConfig(), OracleBackend(env), 0)
    rows = summarize([res])
    assert rows[0].success_rate == 1.0
    assert format_summary(rows).startswith("full@alpha=1.0: episodes=1 success_rate=1.000")
