"""Domain vocabulary shared by every part of the decision engine.

All types are frozen dataclasses holding tuples, so they can be passed
between threads freely. Each type knows how to turn itself into a plain
JSON-compatible dict and back; that dict form is the trace format.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, replace
from typing import Any

EPS_FLOOR = 1e-10


class ConfigurationError(ValueError):
    """Raised when user-supplied configuration is unusable."""


class Judgment(str, enum.Enum):
    GOOD = "GOOD"
    BAD = "BAD"
    UNKNOWN = "UNKNOWN"


class Termination(str, enum.Enum):
    GOOD = "GOOD"
    BAD = "BAD"
    DEPTH_LIMIT = "DEPTH_LIMIT"


class Mode(str, enum.Enum):
    FULL = "full"
    NO_CRITIC = "no-critic"
    CRITIC_ONLY = "critic-only"
    NO_ROLLOUT = "no-rollout"
    NO_REFLECTION = "no-reflection"
    Q_VARIANT = "q-variant"
    DIRECT_EVAL = "direct-eval"

    @classmethod
    def parse(cls, value: str | Mode) -> Mode:
        if isinstance(value, Mode):
            return value
        key = value.strip().lower().replace("_", "-")
        for mode in cls:
            if mode.value == key:
                return mode
        raise ConfigurationError(f"unknown mode {value!r}")


# alpha -> infinity turns the improved policy into pure critic argmax
CRITIC_ONLY = math.inf


def alpha_to_json(alpha: float) -> float | str:
    return "critic_only" if math.isinf(alpha) else alpha


def alpha_from_json(value: Any) -> float:
    if isinstance(value, str):
        if value.strip().lower().replace("-", "_") in ("critic_only", "inf"):
            return CRITIC_ONLY
        value = float(value)
    return float(value)


_MARKER_RE = re.compile(r"This step is (GOOD|BAD|UNKNOWN)\.?\s*$")
JUDGMENT_PREFIX = "This step is "


@dataclass(frozen=True)
class Goal:
    text: str

    def __post_init__(self):
        if not self.text or not self.text.strip():
            raise ValueError("goal text must be non-empty")


@dataclass(frozen=True)
class Reflection:
    text: str
    judgment: Judgment = Judgment.UNKNOWN

    @classmethod
    def parse(cls, text: str) -> Reflection:
        """Build a reflection, reading the judgment from its closing sentence."""
        text = text.strip()
        m = _MARKER_RE.search(text)
        judgment = Judgment(m.group(1)) if m else Judgment.UNKNOWN
        return cls(text=text, judgment=judgment)

    @property
    def explanation(self) -> str:
        """Reflection text with the trailing judgment sentence removed."""
        return _MARKER_RE.sub("", self.text).rstrip()

    def to_dict(self) -> dict[str, Any]:
        return {"text": self.text, "judgment": self.judgment.value}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> Reflection:
        return cls(text=d["text"], judgment=Judgment(d["judgment"]))


@dataclass(frozen=True)
class Step:
    action: str
    observation: str
    reflection: Reflection | None = None

    def __post_init__(self):
        if not self.action or not self.observation:
            raise ValueError("step action and observation must be non-empty")

    def to_dict(self) -> dict[str, Any]:
        return {
            "action": self.action,
            "observation": self.observation,
            "reflection": self.reflection.to_dict() if self.reflection else None,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> Step:
        r = d.get("reflection")
        return cls(d["action"], d["observation"], Reflection.from_dict(r) if r else None)


@dataclass(frozen=True)
class History:
    goal: Goal
    initial_observation: str
    steps: tuple[Step, ...] = ()

    def append(self, step: Step) -> History:
        return replace(self, steps=self.steps + (step,))

    def extend(self, steps) -> History:
        return replace(self, steps=self.steps + tuple(steps))

    def without_reflections(self) -> History:
        return replace(self, steps=tuple(replace(s, reflection=None) for s in self.steps))

    def __len__(self) -> int:
        return len(self.steps)

    def to_dict(self) -> dict[str, Any]:
        return {
            "goal": self.goal.text,
            "initial_observation": self.initial_observation,
            "steps": [s.to_dict() for s in self.steps],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> History:
        return cls(
            Goal(d["goal"]),
            d["initial_observation"],
            tuple(Step.from_dict(s) for s in d["steps"]),
        )


@dataclass(frozen=True)
class RolloutTrajectory:
    steps: tuple[Step, ...] = ()
    terminated_by: Termination = Termination.DEPTH_LIMIT
    warning: str | None = None

    def __post_init__(self):
        if self.terminated_by is not Termination.DEPTH_LIMIT:
            last = self.steps[-1].reflection if self.steps else None
            if last is None or last.judgment.value != self.terminated_by.value:
                raise ValueError("terminal judgment must match the last reflection")

    def to_dict(self) -> dict[str, Any]:
        return {
            "steps": [s.to_dict() for s in self.steps],
            "terminated_by": self.terminated_by.value,
            "warning": self.warning,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> RolloutTrajectory:
        return cls(
            tuple(Step.from_dict(s) for s in d["steps"]),
            Termination(d["terminated_by"]),
            d.get("warning"),
        )


@dataclass(frozen=True)
class OutcomeBelief:
    """Normalized success/failure pair, plus the raw marker masses it came from.

    ``raw_success``/``raw_failure`` are the token probabilities as read from
    the model (after flooring). They default to the normalized pair.
    """

    p_success: float
    p_failure: float
    raw_success: float | None = None
    raw_failure: float | None = None

    def __post_init__(self):
        if not (0.0 < self.p_success < 1.0 and 0.0 < self.p_failure < 1.0):
            raise ValueError("belief probabilities must lie in (0, 1)")
        if abs(self.p_success + self.p_failure - 1.0) > 1e-9:
            raise ValueError("belief pair must sum to 1")
        if self.raw_success is None:
            object.__setattr__(self, "raw_success", self.p_success)
        if self.raw_failure is None:
            object.__setattr__(self, "raw_failure", self.p_failure)

    @classmethod
    def from_raw(cls, success: float, failure: float) -> OutcomeBelief:
        total = success + failure
        return cls(success / total, failure / total, success, failure)

    def to_dict(self) -> dict[str, Any]:
        return {
            "p_success": self.p_success,
            "p_failure": self.p_failure,
            "raw_success": self.raw_success,
            "raw_failure": self.raw_failure,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> OutcomeBelief:
        return cls(d["p_success"], d["p_failure"], d.get("raw_success"), d.get("raw_failure"))


@dataclass(frozen=True)
class CandidateEvaluation:
    action: str
    prior_logprob: float
    q_value: float = 0.0
    belief: OutcomeBelief | None = None
    rollout: RolloutTrajectory | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "action": self.action,
            "prior_logprob": self.prior_logprob,
            "q_value": self.q_value,
            "belief": self.belief.to_dict() if self.belief else None,
            "rollout": self.rollout.to_dict() if self.rollout else None,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> CandidateEvaluation:
        return cls(
            action=d["action"],
            prior_logprob=d["prior_logprob"],
            q_value=d["q_value"],
            belief=OutcomeBelief.from_dict(d["belief"]) if d.get("belief") else None,
            rollout=RolloutTrajectory.from_dict(d["rollout"]) if d.get("rollout") else None,
        )


@dataclass(frozen=True)
class ImprovedDistribution:
    candidate_probs: tuple[float, ...]
    log_partition: float
    alpha: float
    chosen_index: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "candidate_probs": list(self.candidate_probs),
            "log_partition": self.log_partition,
            "alpha": alpha_to_json(self.alpha),
            "chosen_index": self.chosen_index,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> ImprovedDistribution:
        return cls(
            tuple(d["candidate_probs"]),
            d["log_partition"],
            alpha_from_json(d["alpha"]),
            d["chosen_index"],
        )


@dataclass(frozen=True)
class DecisionRecord:
    step_index: int
    candidates: tuple[CandidateEvaluation, ...]
    improved: ImprovedDistribution
    mode: Mode = Mode.FULL

    def __post_init__(self):
        if not self.candidates:
            raise ValueError("a decision needs at least one candidate")
        if len(self.improved.candidate_probs) != len(self.candidates):
            raise ValueError("improved distribution does not match candidates")

    @property
    def chosen(self) -> CandidateEvaluation:
        return self.candidates[self.improved.chosen_index]

    def to_dict(self) -> dict[str, Any]:
        return {
            "type": "decision",
            "step_index": self.step_index,
            "mode": self.mode.value,
            "candidates": [c.to_dict() for c in self.candidates],
            "improved": self.improved.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> DecisionRecord:
        return cls(
            step_index=d["step_index"],
            candidates=tuple(CandidateEvaluation.from_dict(c) for c in d["candidates"]),
            improved=ImprovedDistribution.from_dict(d["improved"]),
            mode=Mode.parse(d["mode"]),
        )


@dataclass(frozen=True)
class EpisodeResult:
    history: History
    reward: float
    success: bool
    steps_used: int
    tokens_used: int
    records: tuple[DecisionRecord, ...] = ()
    config_label: str = ""
    task: str = ""
    seed: int | None = None
    error: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "type": "episode",
            "config_label": self.config_label,
            "task": self.task,
            "seed": self.seed,
            "reward": self.reward,
            "success": self.success,
            "steps_used": self.steps_used,
            "tokens_used": self.tokens_used,
            "error": self.error,
            "history": self.history.to_dict(),
            "records": [r.to_dict() for r in self.records],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> EpisodeResult:
        return cls(
            history=History.from_dict(d["history"]),
            reward=d["reward"],
            success=d["success"],
            steps_used=d["steps_used"],
            tokens_used=d["tokens_used"],
            records=tuple(DecisionRecord.from_dict(r) for r in d["records"]),
            config_label=d.get("config_label", ""),
            task=d.get("task", ""),
            seed=d.get("seed"),
            error=d.get("error"),
        )


def record_from_dict(d: dict[str, Any]) -> DecisionRecord | EpisodeResult:
    """Decode one trace line, dispatching on its ``type`` tag."""
    kind = d.get("type")
    if kind == "decision":
        return DecisionRecord.from_dict(d)
    if kind == "episode":
        return EpisodeResult.from_dict(d)
    raise ValueError(f"unknown trace record type {kind!r}")


def normalize_action(text: str) -> str:
    return " ".join(text.split())


# --------------------------------------------------------------------------
# prompt assembly

REQUIRED_PLACEHOLDERS = ("{examples}", "{trajectory}")


@dataclass(frozen=True)
class PromptTemplate:
    """Layout for prompts: instructions, few-shot examples, then the live task.

    Examples are rendered before the live trajectory so that the live goal
    line is always the last ``Goal of the agent:`` line in a prompt.
    """

    instructions: str = ""
    examples: tuple[str, ...] = ()
    layout: str = "{instructions}{examples}{trajectory}"

    def validate(self) -> None:
        missing = [p for p in REQUIRED_PLACEHOLDERS if p not in self.layout]
        if missing:
            raise ConfigurationError(f"prompt layout is missing {', '.join(missing)}")


DEFAULT_TEMPLATE = PromptTemplate()


def render_steps(steps, include_reflections: bool = True) -> list[str]:
    lines = []
    for s in steps:
        lines.append(f"Action:{s.action}")
        lines.append(f"Observation:{s.observation}")
        if include_reflections and s.reflection is not None:
            lines.append(f"Critic:{s.reflection.text}")
    return lines


def history_to_prompt(
    history: History,
    template: PromptTemplate = DEFAULT_TEMPLATE,
    include_reflections: bool = True,
) -> str:
    """Render goal, initial observation and steps in (action, observation, critic) order."""
    template.validate()
    lines = [f"Goal of the agent: {history.goal.text}", f"Observation:{history.initial_observation}"]
    lines += render_steps(history.steps, include_reflections)
    instructions = template.instructions + "\n\n" if template.instructions else ""
    examples = "".join(ex.rstrip("\n") + "\n\n" for ex in template.examples)
    return template.layout.format(
        instructions=instructions, examples=examples, trajectory="\n".join(lines)
    )


def action_prompt(history, template=DEFAULT_TEMPLATE, include_reflections=True) -> str:
    return history_to_prompt(history, template, include_reflections) + "\nAction:"


def observation_prompt(history, action, template=DEFAULT_TEMPLATE, include_reflections=True) -> str:
    return history_to_prompt(history, template, include_reflections) + f"\nAction:{action}\nObservation:"


def reflection_prompt(history, step: Step, template=DEFAULT_TEMPLATE) -> str:
    """Prompt asking for the reflection on ``step``, taken right after ``history``."""
    body = history_to_prompt(history, template)
    return body + f"\nAction:{step.action}\nObservation:{step.observation}\nCritic:"


def judgment_prompt(
    history: History,
    action: str,
    rollout: RolloutTrajectory | None,
    template: PromptTemplate = DEFAULT_TEMPLATE,
    include_reflections: bool = True,
) -> str:
    """Context that ends exactly where the critic's marker word goes."""
    steps = rollout.steps if rollout is not None else ()
    if not steps:
        return history_to_prompt(history, template, include_reflections) + (
            f"\nAction:{action}\nCritic:{JUDGMENT_PREFIX}"
        )
    body = history_to_prompt(history.extend(steps[:-1]), template, include_reflections)
    last = steps[-1]
    explanation = ""
    if include_reflections and last.reflection is not None:
        explanation = last.reflection.explanation
    lead = f"{explanation} " if explanation else ""
    return body + (
        f"\nAction:{last.action}\nObservation:{last.observation}\nCritic:{lead}{JUDGMENT_PREFIX}"
    )


def direct_eval_prompt(
    history: History,
    action: str,
    rollout: RolloutTrajectory | None,
    template: PromptTemplate = DEFAULT_TEMPLATE,
    include_reflections: bool = True,
) -> str:
    steps = rollout.steps if rollout is not None else ()
    body = history_to_prompt(history, template, include_reflections)
    if steps:
        body += "\n" + "\n".join(render_steps(steps, include_reflections))
    else:
        body += f"\nAction:{action}"
    return body + f"\n{DIRECT_EVAL_SUFFIX}"


DIRECT_EVAL_SUFFIX = "Probability of success (0 to 1):"
