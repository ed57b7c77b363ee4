"""Episode driver: one decision per step, horizons, ablation modes, batches."""

from __future__ import annotations

import contextvars
import csv
import io
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Sequence

from lac.actor import ActorConfig, ActorExhausted, sample_candidates
from lac.backends.base import (
    Backend,
    BackendError,
    GenerationRequest,
    TransientBackendError,
    token_meter,
)
from lac.core import (
    CRITIC_ONLY,
    DEFAULT_TEMPLATE,
    CandidateEvaluation,
    ConfigurationError,
    DecisionRecord,
    EpisodeResult,
    Goal,
    History,
    Mode,
    PromptTemplate,
    Reflection,
    RolloutTrajectory,
    Step,
    alpha_from_json,
    alpha_to_json,
    reflection_prompt,
)
from lac.critic import (
    CriticUnavailable,
    MarkerPair,
    q_direct_eval_with_rollout,
    q_variant_logpw,
    q_with_rollout,
    sigmoid,
)
from lac.policy import ImprovementInput, improve
from lac.protocol import Environment, EnvProtocolError, SubprocessEnv
from lac.world_model import RolloutConfig, rollout

log = logging.getLogger(__name__)

PROFILE_HORIZONS = {"babyai": 30, "alfworld": 40, "webshop": 15}
EMPTY_OBSERVATION = "(no observation)"

# modes whose decisions ignore alpha
_FIXED_ALPHA = {Mode.NO_CRITIC: 0.0, Mode.CRITIC_ONLY: CRITIC_ONLY}


@dataclass(frozen=True)
class EngineConfig:
    alpha: float = 1.0
    num_candidates: int = 5
    rollout: RolloutConfig = field(default_factory=RolloutConfig)
    markers: MarkerPair = field(default_factory=MarkerPair)
    horizon: int | None = None
    mode: Mode = Mode.FULL
    profile: str = "babyai"
    label: str = ""
    template: PromptTemplate = DEFAULT_TEMPLATE
    max_action_tokens: int = 32
    rollout_workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode.parse(self.mode))
        alpha = alpha_from_json(self.alpha)
        if math.isnan(alpha) or alpha < 0:
            raise ConfigurationError("alpha must be ≥ 0")
        object.__setattr__(self, "alpha", alpha)
        if self.profile not in PROFILE_HORIZONS:
            raise ConfigurationError(f"unknown profile {self.profile!r}; use one of {sorted(PROFILE_HORIZONS)}")
        if self.horizon is None:
            object.__setattr__(self, "horizon", PROFILE_HORIZONS[self.profile])
        if self.horizon < 1:
            raise ConfigurationError("horizon must be ≥ 1")
        if self.num_candidates < 1:
            raise ConfigurationError("num_candidates must be ≥ 1")
        if self.rollout_workers < 1:
            raise ConfigurationError("rollout_workers must be ≥ 1")
        self.template.validate()
        if not self.label:
            object.__setattr__(self, "label", self.default_label())

    @property
    def effective_alpha(self) -> float:
        return _FIXED_ALPHA.get(self.mode, self.alpha)

    @property
    def uses_reflections(self) -> bool:
        return self.mode is not Mode.NO_REFLECTION

    def default_label(self) -> str:
        if self.mode in _FIXED_ALPHA:
            return self.mode.value
        return f"{self.mode.value}@alpha={alpha_to_json(self.alpha)}"

    def to_dict(self) -> dict[str, Any]:
        return {
            "label": self.label,
            "mode": self.mode.value,
            "alpha": alpha_to_json(self.alpha),
            "num_candidates": self.num_candidates,
            "max_depth": self.rollout.max_depth,
            "horizon": self.horizon,
            "profile": self.profile,
            "markers": [self.markers.positive, self.markers.negative],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> EngineConfig:
        known = {"label", "mode", "alpha", "num_candidates", "max_depth", "horizon", "profile",
                 "markers", "rollout_workers"}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {', '.join(sorted(unknown))}")
        try:
            markers = MarkerPair(*d.get("markers", ("GOOD", "BAD")))
            rollout_cfg = RolloutConfig(max_depth=int(d.get("max_depth", 4)))
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(str(exc)) from exc
        return cls(
            alpha=d.get("alpha", 1.0),
            num_candidates=int(d.get("num_candidates", 5)),
            rollout=rollout_cfg,
            markers=markers,
            horizon=d.get("horizon"),
            mode=d.get("mode", "full"),
            profile=d.get("profile", "babyai"),
            label=d.get("label", ""),
            rollout_workers=int(d.get("rollout_workers", 1)),
        )


# --------------------------------------------------------------------------
# one decision


def _evaluate(history: History, action: str, prior: float, cfg: EngineConfig, backend: Backend):
    mode, refl = cfg.mode, cfg.uses_reflections
    if mode is Mode.NO_ROLLOUT:
        traj = RolloutTrajectory()
    else:
        traj = rollout(history, action, replace(cfg.rollout, include_reflections=refl), backend, cfg.template)
    if mode is Mode.DIRECT_EVAL:
        q = q_direct_eval_with_rollout(history, action, traj, backend, cfg.template, refl)
        return CandidateEvaluation(action, prior, q, sigmoid(q), traj)
    belief, q = q_with_rollout(history, action, traj, cfg.markers, backend, cfg.template, refl)
    if mode is Mode.Q_VARIANT:
        q = q_variant_logpw(belief)
    return CandidateEvaluation(action, prior, q, belief, traj)


def decide_step(
    history: History, cfg: EngineConfig, backend: Backend, step_index: int | None = None
) -> tuple[str, DecisionRecord]:
    """Choose the next action: candidates, rollouts, critic, improved policy."""
    if len(history) >= cfg.horizon:
        raise ValueError("history already reached the horizon")
    step_index = len(history) if step_index is None else step_index
    actor_cfg = ActorConfig(cfg.num_candidates, cfg.max_action_tokens)
    candidates = sample_candidates(history, actor_cfg, backend, cfg.template, cfg.uses_reflections)

    if cfg.mode is Mode.NO_CRITIC:
        evals = [CandidateEvaluation(a, lp) for a, lp in candidates]
    elif cfg.rollout_workers > 1 and len(candidates) > 1:
        with ThreadPoolExecutor(min(cfg.rollout_workers, len(candidates))) as pool:
            futures = [
                pool.submit(contextvars.copy_context().run, _evaluate, history, a, lp, cfg, backend)
                for a, lp in candidates
            ]
            evals = [f.result() for f in futures]
    else:
        evals = [_evaluate(history, a, lp, cfg, backend) for a, lp in candidates]

    dist = improve(
        ImprovementInput(
            tuple(e.prior_logprob for e in evals), tuple(e.q_value for e in evals), cfg.effective_alpha
        )
    )
    record = DecisionRecord(step_index, tuple(evals), dist, cfg.mode)
    return record.chosen.action, record


# --------------------------------------------------------------------------
# one episode


def _decide_with_retry(history, cfg, backend, step_index):
    try:
        return decide_step(history, cfg, backend, step_index)
    except TransientBackendError as exc:
        log.warning("transient backend failure, retrying once: %s", exc)
        return decide_step(history, cfg, backend, step_index)


def _live_reflection(history: History, step: Step, cfg: EngineConfig, backend: Backend):
    prompt = reflection_prompt(history, step, cfg.template)
    try:
        text = backend.generate(GenerationRequest(prompt, max_tokens=cfg.rollout.max_tokens)).text
    except BackendError as exc:
        log.warning("no reflection for step %d: %s", len(history) + 1, exc)
        return None
    return Reflection.parse(text) if text.strip() else None


def run_episode(
    env: Environment,
    cfg: EngineConfig,
    backend: Backend,
    seed: int,
    task: str = "GoTo",
    on_record: Callable[[DecisionRecord], None] | None = None,
) -> EpisodeResult:
    """Play one episode, attempted once, until done or the horizon.

    Any backend or environment failure ends the episode as a failure with
    the error recorded; the episode is never restarted.
    """
    from lac.gridworld.oracle import OracleDesync

    fatal = (BackendError, ActorExhausted, CriticUnavailable, OracleDesync, EnvProtocolError)
    records: list[DecisionRecord] = []
    reward, done, error = 0.0, False, None
    with token_meter() as meter:
        try:
            goal, obs = env.reset(seed, task)
        except (EnvProtocolError, OSError, ValueError) as exc:
            history = History(Goal(task or "unknown task"), "")
            return EpisodeResult(history, 0.0, False, 0, meter.tokens, (), cfg.label, task, seed,
                                 f"reset failed: {exc}")
        history = History(goal, obs)
        while not done and len(history) < cfg.horizon:
            try:
                action, record = _decide_with_retry(history, cfg, backend, len(history))
            except fatal as exc:
                error = f"{type(exc).__name__}: {exc}"
                break
            records.append(record)
            if on_record is not None:
                on_record(record)
            try:
                outcome = env.step(action)
            except (EnvProtocolError, OSError) as exc:
                error = f"{type(exc).__name__}: {exc}"
                break
            step = Step(action, outcome.observation_text or EMPTY_OBSERVATION)
            if cfg.uses_reflections:
                step = replace(step, reflection=_live_reflection(history, step, cfg, backend))
            history = history.append(step)
            reward, done = outcome.reward, outcome.done
    final_reward = reward if done else 0.0
    success = done and final_reward >= 1.0
    return EpisodeResult(
        history, final_reward, success, len(history), meter.tokens, tuple(records),
        cfg.label, task, seed, error,
    )


# --------------------------------------------------------------------------
# batches


@dataclass(frozen=True)
class TaskSet:
    kind: str
    seeds: tuple[int, ...]

    def __post_init__(self):
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigurationError(f"seeds for {self.kind} must be distinct")


@dataclass(frozen=True)
class RunManifest:
    tasks: tuple[TaskSet, ...] = ()
    configs: tuple[EngineConfig, ...] = (EngineConfig(),)
    backend: dict = field(default_factory=lambda: {"type": "oracle"})
    env: dict = field(default_factory=lambda: {"type": "gridworld"})
    output: str | None = None
    workers: int = 1

    def __post_init__(self):
        labels = [c.label for c in self.configs]
        if len(set(labels)) != len(labels):
            raise ConfigurationError("config labels must be distinct")
        if self.workers < 1:
            raise ConfigurationError("workers must be ≥ 1")

    @classmethod
    def from_dict(cls, d: dict[str, Any], base_dir: Path | None = None) -> RunManifest:
        if not isinstance(d, dict):
            raise ConfigurationError("manifest must be a JSON object")
        try:
            tasks = tuple(TaskSet(t["kind"], tuple(int(s) for s in t["seeds"])) for t in d.get("tasks", []))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigurationError(f"bad task entry: {exc}") from exc
        raw = d.get("configs", d.get("config", {}))
        raw = raw if isinstance(raw, list) else [raw]
        configs = tuple(EngineConfig.from_dict(c) for c in raw)
        backend = dict(d.get("backend", {"type": "oracle"}))
        if backend.get("type") == "scripted" and base_dir is not None and "rules" in backend:
            backend["rules"] = str((base_dir / backend["rules"]).resolve())
        output = d.get("output")
        if output is not None and base_dir is not None:
            output = str(base_dir / output)
        return cls(tasks, configs, backend, dict(d.get("env", {"type": "gridworld"})), output,
                   int(d.get("workers", 1)))

    @classmethod
    def load(cls, path: str | Path) -> RunManifest:
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read manifest {path}: {exc}") from exc
        return cls.from_dict(data, path.parent)


def make_env(desc: dict) -> Environment:
    kind = desc.get("type", "gridworld")
    if kind == "gridworld":
        from lac.gridworld.env import GridWorldEnv

        return GridWorldEnv()
    if kind == "subprocess":
        command = desc.get("command")
        if not command:
            raise ConfigurationError("subprocess env needs a 'command' list")
        return SubprocessEnv(command, float(desc.get("timeout", 30.0)))
    raise ConfigurationError(f"unknown env type {kind!r}")


def backend_factory(desc: dict) -> Callable[[Environment], Backend]:
    """Build a per-episode backend constructor from a manifest descriptor."""
    kind = desc.get("type", "oracle")
    if kind == "oracle":
        from lac.gridworld.oracle import oracle_factory

        opts = {k: desc[k] for k in ("epsilon", "critic_noise", "noise_seed", "prior", "kappa", "beta") if k in desc}
        try:
            build = oracle_factory(**opts)
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from exc
        return build
    if kind == "scripted":
        from lac.backends.scripted import ScriptedBackend

        if "rules" not in desc:
            raise ConfigurationError("scripted backend needs a 'rules' file")
        try:
            shared = ScriptedBackend.from_json(desc["rules"])
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigurationError(f"cannot load scripted rules: {exc}") from exc
        return lambda env: shared
    if kind == "http":
        from lac.backends.http import HttpBackend, HttpConfig

        overrides = {k: desc[k] for k in ("base_url", "model", "api_key", "timeout", "retries") if k in desc}
        shared = HttpBackend(HttpConfig.from_env(**overrides))
        return lambda env: shared
    raise ConfigurationError(f"unknown backend type {kind!r}")


@dataclass(frozen=True)
class SummaryRow:
    label: str
    episodes: int
    successes: int
    success_rate: float
    mean_reward: float
    mean_steps: float
    mean_tokens: float
    errors: int = 0

    def to_dict(self) -> dict[str, Any]:
        return dict(self.__dict__)


def summarize(results: Sequence[EpisodeResult], labels: Sequence[str] | None = None) -> list[SummaryRow]:
    labels = list(labels) if labels is not None else list(dict.fromkeys(r.config_label for r in results))
    rows = []
    for label in labels:
        group = [r for r in results if r.config_label == label]
        n = len(group)
        if n == 0:
            rows.append(SummaryRow(label, 0, 0, 0.0, 0.0, 0.0, 0.0))
            continue
        wins = sum(r.success for r in group)
        rows.append(SummaryRow(
            label, n, wins, wins / n,
            sum(r.reward for r in group) / n,
            sum(r.steps_used for r in group) / n,
            sum(r.tokens_used for r in group) / n,
            sum(r.error is not None for r in group),
        ))
    return rows


def format_summary(rows: Sequence[SummaryRow]) -> str:
    return "\n".join(
        f"{r.label}: episodes={r.episodes} success_rate={r.success_rate:.3f} "
        f"mean_reward={r.mean_reward:.3f} mean_steps={r.mean_steps:.2f} mean_tokens={r.mean_tokens:.1f}"
        for r in rows
    )


def summary_csv(rows: Sequence[SummaryRow]) -> str:
    buf = io.StringIO()
    fields = list(SummaryRow.__dataclass_fields__)
    writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow(r.to_dict())
    return buf.getvalue()


def run_batch(manifest: RunManifest) -> list[SummaryRow]:
    """Run every (config, task, seed) combination once and summarize per config.

    Episodes may run concurrently (``manifest.workers``); results keep
    manifest order, so output files do not depend on scheduling.
    """
    build_backend = backend_factory(manifest.backend)
    jobs = [(cfg, ts.kind, seed) for cfg in manifest.configs for ts in manifest.tasks for seed in ts.seeds]

    def one(job) -> EpisodeResult:
        cfg, kind, seed = job
        env = make_env(manifest.env)
        try:
            return run_episode(env, cfg, build_backend(env), seed, kind)
        finally:
            env.close()

    if manifest.workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(manifest.workers) as pool:
            results = list(pool.map(one, jobs))
    else:
        results = [one(job) for job in jobs]

    rows = summarize(results, [c.label for c in manifest.configs])
    if manifest.output:
        write_outputs(Path(manifest.output), results, rows)
    return rows


def write_outputs(out_dir: Path, results: Sequence[EpisodeResult], rows: Sequence[SummaryRow]) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "episodes.jsonl", "w", encoding="utf-8", newline="\n") as fh:
        for r in results:
            fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")
    (out_dir / "summary.json").write_text(
        json.dumps([r.to_dict() for r in rows], indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    (out_dir / "summary.csv").write_text(summary_csv(rows), encoding="utf-8")
