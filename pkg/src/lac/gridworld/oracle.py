"""Ground-truth backend for the gridworld.

The oracle stands in for a language model that knows the room exactly. It
reads the live episode from a ``GridWorldEnv`` (the mirror), parses the
actions written in a prompt, replays them, and answers the query the prompt
ends with:

    ...Action:              -> next action (BFS-optimal, optionally corrupted)
    ...Observation:         -> rendered observation after the last action
    ...Critic:              -> reflection on the last action
    ...This step is         -> GOOD/BAD marker probabilities
    ...(0 to 1):            -> success probability as text

Marker probabilities come from the shortest-plan length d:
    p_success = sigmoid(kappa * progress + beta / (1 + d))
where progress is the drop in d over the simulated segment, minus one for
every step that changed nothing.
"""

from __future__ import annotations

import hashlib
import math

from lac.backends.base import (
    TOP_K,
    GenerationRequest,
    GenerationResult,
    TokenQuery,
    UnsupportedCapability,
    aggregate_variants,
    charge,
    rough_token_count,
)
from lac.core import DIRECT_EVAL_SUFFIX, EPS_FLOOR, ConfigurationError, JUDGMENT_PREFIX, normalize_action
from lac.gridworld.env import (
    ACTIONS,
    DROP,
    FORWARD,
    INVALID_OBSERVATION,
    PICK_UP,
    TOGGLE,
    TURN_LEFT,
    TURN_RIGHT,
    GridState,
    GridWorldEnv,
    advance,
    node_distance,
)
from lac.gridworld.render import describe_offset, relative, render_observation

GOAL_MARK = "Goal of the agent:"
POSITIVE = ("good", "success")
NEGATIVE = ("bad", "failure")


class OracleDesync(RuntimeError):
    """The prompt or the environment no longer matches the oracle's mirror."""


def _unit(*parts) -> float:
    digest = hashlib.blake2b("\x1f".join(map(str, parts)).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big") / 2**64


def _sigmoid(z: float) -> float:
    return 1.0 / (1.0 + math.exp(-z)) if z >= 0 else math.exp(z) / (1.0 + math.exp(z))


class OracleBackend:
    """Backend that answers from the true gridworld dynamics.

    Args:
        env: the live environment to mirror.
        epsilon: prior corruption rate. At each decision state the favored
            action is replaced by a uniformly random primitive with this
            probability, and the action distribution is
            ``(1 - epsilon) * onehot(favored) + epsilon * uniform``.
        critic_noise: probability of flipping each GOOD/BAD verdict.
        noise_seed: seed for both noise sources.
        prior: ``"optimal"`` favors the shortest-plan action,
            ``"adversarial"`` the action that lengthens the plan most.
        kappa, beta: calibration constants of the marker probabilities.
    """

    def __init__(
        self,
        env: GridWorldEnv,
        epsilon: float = 0.0,
        critic_noise: float = 0.0,
        noise_seed: int = 0,
        prior: str = "optimal",
        kappa: float = 3.0,
        beta: float = 2.0,
    ):
        if not 0.0 <= epsilon <= 1.0 or not 0.0 <= critic_noise <= 1.0:
            raise ValueError("epsilon and critic_noise must lie in [0, 1]")
        if prior not in ("optimal", "adversarial"):
            raise ValueError("prior must be 'optimal' or 'adversarial'")
        self.env = env
        self.epsilon = epsilon
        self.critic_noise = critic_noise
        self.noise_seed = noise_seed
        self.prior = prior
        self.kappa = kappa
        self.beta = beta
        self._cache_owner = None
        self._nodes: dict[tuple, tuple] = {}

    # ------------------------------------------------------------------ mirror

    def _replay(self, actions: tuple[str, ...]):
        """Node reached after ``actions`` plus whether the last action was legal."""
        init = self.env.initial_state
        if self._cache_owner is not init:
            self._cache_owner = init
            self._nodes = {(): (init.node(), True)}
        hit = self._nodes.get(actions)
        if hit is not None:
            return hit
        prev, _ = self._replay(actions[:-1])
        result = advance(init.layout, prev, actions[-1])
        self._nodes[actions] = result
        return result

    def _parse(self, prompt: str):
        env = self.env
        if env.initial_state is None:
            raise OracleDesync("environment has not been reset")
        start = prompt.rfind(GOAL_MARK)
        if start < 0:
            raise UnsupportedCapability("oracle only understands gridworld prompts")
        lines = prompt[start:].split("\n")
        actions = tuple(normalize_action(l[7:]) for l in lines[:-1] if l.startswith("Action:"))
        live = tuple(env.actions)
        if actions[: len(live)] != live:
            raise OracleDesync("prompt history differs from the live episode")
        if self._replay(live)[0] != env.state.node():
            raise OracleDesync("environment state changed outside the action log")
        return lines[-1], actions, len(live)

    def _state_at(self, node) -> GridState:
        state = self.env.initial_state.copy()
        state.set_node(node)
        return state

    def _key(self, node, action: str = "") -> str:
        init = self.env.initial_state
        return f"{init.task.kind.value}|{init.rng_seed}|{node!r}|{action}"

    # ----------------------------------------------------------------- policy

    def _favored(self, actions) -> str:
        layout = self.env.initial_state.layout
        node, _ = self._replay(actions)
        key = self._key(node)
        if self.epsilon > 0 and _unit(self.noise_seed, "prior", key) < self.epsilon:
            pick = int(_unit(self.noise_seed, "prior-pick", key) * len(ACTIONS))
            return ACTIONS[pick]
        outcomes = []
        for a in ACTIONS:
            nxt, _ = advance(layout, node, a)
            outcomes.append((node_distance(layout, nxt), nxt == node, a))
        if self.prior == "adversarial":
            # longest remaining plan, preferring moves that change something
            return max(outcomes, key=lambda o: (o[0], not o[1]))[2]
        d = node_distance(layout, node)
        for dist, _, a in outcomes:
            if dist == d - 1:
                return a
        return TOGGLE

    def action_distribution(self, actions) -> dict[str, float]:
        favored = self._favored(tuple(actions))
        probs = {a: self.epsilon / len(ACTIONS) for a in ACTIONS}
        probs[favored] += 1.0 - self.epsilon
        probs = {a: max(p, EPS_FLOOR) for a, p in probs.items()}
        total = sum(probs.values())
        return {a: p / total for a, p in probs.items()}

    # ----------------------------------------------------------------- critic

    def _flipped(self, actions) -> bool:
        if self.critic_noise <= 0 or not actions:
            return False
        key = self._key("|".join(actions))
        return _unit(self.noise_seed, "critic", key) < self.critic_noise

    def verdict(self, actions) -> str:
        """GOOD/BAD/UNKNOWN for the last action in ``actions``."""
        layout = self.env.initial_state.layout
        before, _ = self._replay(actions[:-1])
        after, valid = self._replay(actions)
        d0, d1 = node_distance(layout, before), node_distance(layout, after)
        if not valid or after == before or d1 > d0:
            label = "BAD"
        elif d1 < d0:
            label = "GOOD"
        else:
            label = "UNKNOWN"
        if label != "UNKNOWN" and self._flipped(actions):
            label = "GOOD" if label == "BAD" else "BAD"
        return label

    def success_probability(self, actions, n_live: int) -> float:
        """Calibrated success belief after ``actions``; the segment under
        judgment starts at the live state, or at the last real action when
        nothing was simulated."""
        layout = self.env.initial_state.layout
        start = n_live if len(actions) > n_live else max(n_live - 1, 0)
        d_prev = node_distance(layout, self._replay(actions[:start])[0])
        wasted = 0
        for k in range(start + 1, len(actions) + 1):
            prev, _ = self._replay(actions[: k - 1])
            node, valid = self._replay(actions[:k])
            wasted += (not valid) or node == prev
        d = node_distance(layout, self._replay(actions)[0])
        # label noise reverses the verdict on the step, not the sense of proximity
        sign = -1.0 if self._flipped(actions) else 1.0
        if math.isinf(d) or math.isinf(d_prev):
            p = _sigmoid(-sign * self.kappa)
        else:
            p = _sigmoid(sign * self.kappa * (d_prev - d - wasted) + self.beta / (1.0 + d))
        return min(max(p, EPS_FLOOR), 1.0 - EPS_FLOOR)

    def _reflection(self, actions) -> str:
        init = self.env.initial_state
        before, _ = self._replay(actions[:-1])
        after, valid = self._replay(actions)
        action = actions[-1]
        state = self._state_at(after)
        if not valid:
            phrase = "That action is not valid"
        elif after == before:
            phrase = {
                FORWARD: "I could not move forward",
                PICK_UP: "There is nothing I can pick up",
                DROP: "I could not drop anything",
            }.get(action, "Nothing changed")
        elif action == PICK_UP:
            phrase = f"I have picked up the {init.objects[after[3]].name}"
        elif action == DROP:
            phrase = f"I have dropped the {init.objects[before[3]].name}"
        else:
            phrase = {TURN_LEFT: "I have turned left", TURN_RIGHT: "I have turned right"}.get(
                action, "I have gone forward"
            )
        sentences = [phrase + "."]
        progress = min(after[5], len(init.layout.subtasks) - 1)
        _, target = init.layout.subtasks[progress]
        pos = after[4][target]
        if pos is not None and after[5] < len(init.layout.subtasks):
            f, r = relative(state, pos)
            if f >= 0 and (f, r) != (0, 0):
                sentences.append(f"The {init.objects[target].name} is {describe_offset(f, r)}.")
        return " ".join(sentences) + f" This step is {self.verdict(actions)}."

    # ------------------------------------------------------------ backend API

    def generate(self, req: GenerationRequest) -> GenerationResult:
        last, actions, n_live = self._parse(req.prompt)
        if last == "Action:":
            dist = self.action_distribution(actions)
            text = max(ACTIONS, key=lambda a: dist[a])
        elif last.startswith("Action:"):
            text = ""
        elif last == "Observation:":
            node, valid = self._replay(actions)
            text = render_observation(self._state_at(node)) if valid else INVALID_OBSERVATION
        elif last == "Critic:":
            text = self._reflection(actions)
        elif last == DIRECT_EVAL_SUFFIX:
            text = f"{self.success_probability(actions, n_live):.3f}"
        else:
            raise UnsupportedCapability(f"oracle cannot continue {last[-40:]!r}")
        charge(rough_token_count(req.prompt) + rough_token_count(text))
        return GenerationResult(text=text, token_logprobs=(0.0,) * rough_token_count(text),
                                total_tokens=rough_token_count(req.prompt) + rough_token_count(text))

    def _action_query(self, prompt: str):
        last, actions, _ = self._parse(prompt)
        if last != "Action:":
            raise UnsupportedCapability("oracle scores actions only at an action position")
        return self.action_distribution(actions)

    def score_continuation(self, prompt: str, continuation: str) -> float:
        if not continuation:
            raise ValueError("continuation must be non-empty")
        dist = self._action_query(prompt)
        charge(rough_token_count(prompt) + rough_token_count(continuation))
        return math.log(dist.get(normalize_action(continuation), EPS_FLOOR))

    def top_next_tokens(self, prompt: str, k: int = TOP_K) -> list[tuple[str, float]]:
        dist = self._action_query(prompt)
        charge(rough_token_count(prompt) + 1)
        return sorted(dist.items(), key=lambda kv: -kv[1])[:k]

    def next_token_probs(self, q: TokenQuery) -> list[tuple[str, float]]:
        last, actions, n_live = self._parse(q.prompt)
        charge(rough_token_count(q.prompt) + 1)
        if last == "Action:":
            return aggregate_variants(self.action_distribution(actions).items(), q.candidate_tokens)
        if not last.endswith(JUDGMENT_PREFIX):
            raise UnsupportedCapability("no marker distribution at this position")
        p = self.success_probability(actions, n_live)
        alts = [(m, p) for m in POSITIVE] + [(m, 1.0 - p) for m in NEGATIVE]
        return aggregate_variants(alts, q.candidate_tokens)


def oracle_factory(**kwargs):
    """Callable building one oracle per environment, for ``run_batch``."""

    def build(env):
        if not isinstance(env, GridWorldEnv):
            raise ConfigurationError("the oracle backend needs the built-in gridworld environment")
        return OracleBackend(env, **kwargs)

    return build
