"""Single-room 8x8 text gridworld with BabyAI-style tasks.

Coordinates: x grows to the east, y grows to the south. The outer ring of
tiles is wall; the agent and objects live on the 6x6 interior. Headings are
0=east, 1=south, 2=west, 3=north.
"""

from __future__ import annotations

import enum
import heapq
import math
import random
from dataclasses import dataclass, field
from functools import lru_cache

from lac.core import ConfigurationError, Goal

WIDTH = HEIGHT = 8
COLORS = ("red", "green", "blue", "yellow", "grey", "purple")
KINDS = ("key", "ball", "box")
DIR_VECS = ((1, 0), (0, 1), (-1, 0), (0, -1))
HEADINGS = ("east", "south", "west", "north")

TURN_LEFT = "turn left"
TURN_RIGHT = "turn right"
FORWARD = "go forward"
PICK_UP = "pick up"
DROP = "drop"
TOGGLE = "toggle"
ACTIONS = (TURN_LEFT, TURN_RIGHT, FORWARD, PICK_UP, DROP, TOGGLE)
INVALID_OBSERVATION = "Invalid action."


class TaskKind(str, enum.Enum):
    GOTO = "GoTo"
    PICKUP = "PickUp"
    GOTO_AFTER_PICKUP = "GoToAfterPickUp"
    PICKUP_THEN_GOTO = "PickUpThenGoTo"

    @classmethod
    def parse(cls, value: str | TaskKind) -> TaskKind:
        if isinstance(value, TaskKind):
            return value
        key = value.replace("-", "").replace("_", "").replace(" ", "").lower()
        for kind in cls:
            if kind.value.lower() == key:
                return kind
        raise ConfigurationError(f"unknown task kind {value!r}")

    @property
    def n_targets(self) -> int:
        return 1 if self in (TaskKind.GOTO, TaskKind.PICKUP) else 2


@dataclass(frozen=True)
class WorldObject:
    color: str
    kind: str

    @property
    def name(self) -> str:
        return f"{self.color} {self.kind}"


@dataclass(frozen=True)
class TaskSpec:
    kind: TaskKind
    targets: tuple[WorldObject, ...]

    def __post_init__(self):
        if len(self.targets) != self.kind.n_targets:
            raise ValueError(f"{self.kind.value} needs {self.kind.n_targets} target(s)")

    @property
    def subtasks(self) -> tuple[tuple[str, WorldObject], ...]:
        """(op, target) pairs in the order they must be satisfied."""
        t = self.targets
        if self.kind is TaskKind.GOTO:
            return (("goto", t[0]),)
        if self.kind is TaskKind.PICKUP:
            return (("pickup", t[0]),)
        return (("pickup", t[0]), ("goto", t[1]))

    def goal_text(self) -> str:
        t = self.targets
        if self.kind is TaskKind.GOTO:
            return f"go to the {t[0].name}"
        if self.kind is TaskKind.PICKUP:
            return f"pick up the {t[0].name}"
        if self.kind is TaskKind.GOTO_AFTER_PICKUP:
            return f"go to the {t[1].name} after you pick up the {t[0].name}"
        return f"pick up the {t[0].name}, then go to the {t[1].name}"


@dataclass(frozen=True)
class EnvStepOutcome:
    observation_text: str
    reward: float
    done: bool


@dataclass(frozen=True)
class Layout:
    """The parts of a state that never change during an episode."""

    objects: tuple[WorldObject, ...]
    subtasks: tuple[tuple[str, int], ...]  # (op, object index)


# (x, y, heading, carried index or -1, object positions (None if carried), progress)
Node = tuple


@dataclass
class GridState:
    agent_pos: tuple[int, int]
    agent_dir: int
    objects: tuple[WorldObject, ...]
    positions: tuple[tuple[int, int] | None, ...]
    task: TaskSpec
    rng_seed: int = 0
    carried: int | None = None
    progress: int = 0
    done: bool = False
    width: int = WIDTH
    height: int = HEIGHT
    _layout: Layout | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.positions = tuple(self.positions)
        self.objects = tuple(self.objects)
        if len(self.positions) != len(self.objects):
            raise ValueError("one position per object")
        placed = [p for p in self.positions if p is not None]
        if len(set(placed)) != len(placed):
            raise ValueError("at most one object per tile")
        for p in placed + [self.agent_pos]:
            if not _interior(p):
                raise ValueError(f"position {p} is outside the room")
        if self.agent_pos in placed:
            raise ValueError("agent overlaps an object")
        if (self.carried is None) != all(p is not None for p in self.positions):
            raise ValueError("exactly the carried object has no position")

    @property
    def layout(self) -> Layout:
        if self._layout is None:
            self._layout = Layout(
                self.objects,
                tuple((op, _index_of(self.objects, t)) for op, t in self.task.subtasks),
            )
        return self._layout

    @property
    def object_list(self) -> list[tuple[str, str, tuple[int, int] | None]]:
        return [(o.color, o.kind, p) for o, p in zip(self.objects, self.positions)]

    @property
    def heading(self) -> str:
        return HEADINGS[self.agent_dir]

    def node(self) -> Node:
        x, y = self.agent_pos
        carried = -1 if self.carried is None else self.carried
        return (x, y, self.agent_dir, carried, self.positions, self.progress)

    def set_node(self, node: Node) -> None:
        x, y, d, carried, positions, progress = node
        self.agent_pos = (x, y)
        self.agent_dir = d
        self.carried = None if carried < 0 else carried
        self.positions = positions
        self.progress = progress
        self.done = progress >= len(self.layout.subtasks)

    def copy(self) -> GridState:
        clone = GridState(
            self.agent_pos, self.agent_dir, self.objects, self.positions, self.task,
            self.rng_seed, self.carried, self.progress, self.done,
        )
        clone._layout = self._layout
        return clone

    def signature(self) -> tuple:
        return (self.node(), self.objects, self.task)


def _index_of(objects, target: WorldObject) -> int:
    for i, o in enumerate(objects):
        if o == target:
            return i
    raise ValueError(f"task target {target.name} is not in the room")


def _interior(p) -> bool:
    return 1 <= p[0] <= WIDTH - 2 and 1 <= p[1] <= HEIGHT - 2


def _is_wall(p) -> bool:
    return not _interior(p)


def _object_at(positions, p) -> int:
    for i, q in enumerate(positions):
        if q == p:
            return i
    return -1


def _catch_up(layout: Layout, x, y, d, carried, positions, progress) -> int:
    dx, dy = DIR_VECS[d]
    ahead = (x + dx, y + dy)
    while progress < len(layout.subtasks):
        op, idx = layout.subtasks[progress]
        if op == "pickup" and carried == idx:
            progress += 1
        elif op == "goto" and positions[idx] == ahead:
            progress += 1
        else:
            break
    return progress


def advance(layout: Layout, node: Node, action: str) -> tuple[Node, bool]:
    """Apply one primitive. Returns (next node, action was a legal primitive)."""
    x, y, d, carried, positions, progress = node
    dx, dy = DIR_VECS[d]
    ahead = (x + dx, y + dy)
    if action == TURN_LEFT:
        d = (d - 1) % 4
    elif action == TURN_RIGHT:
        d = (d + 1) % 4
    elif action == FORWARD:
        if not _is_wall(ahead) and _object_at(positions, ahead) < 0:
            x, y = ahead
    elif action == PICK_UP:
        i = _object_at(positions, ahead)
        if carried < 0 and i >= 0:
            carried = i
            positions = positions[:i] + (None,) + positions[i + 1:]
    elif action == DROP:
        if carried >= 0 and not _is_wall(ahead) and _object_at(positions, ahead) < 0:
            positions = positions[:carried] + (ahead,) + positions[carried + 1:]
            carried = -1
    elif action != TOGGLE:
        return node, False
    progress = _catch_up(layout, x, y, d, carried, positions, progress)
    return (x, y, d, carried, positions, progress), True


# --------------------------------------------------------------------------
# shortest remaining plan length


_POSES = tuple(
    (x, y, d) for x in range(1, WIDTH - 1) for y in range(1, HEIGHT - 1) for d in range(4)
)
_NAV = (TURN_LEFT, TURN_RIGHT, FORWARD)


@lru_cache(maxsize=8192)
def _distance_field(layout: Layout, carried: int, positions: tuple, progress: int) -> dict:
    """Remaining plan length for every agent pose in one object configuration.

    Plans may pick up only the current pickup target and may drop only
    objects no subtask needs; other manipulations never shorten a plan in
    an open room.
    """
    if progress >= len(layout.subtasks):
        return {pose: 0 for pose in _POSES}
    op, target = layout.subtasks[progress]
    needed = {idx for _, idx in layout.subtasks}
    occupied = {p for p in positions if p is not None}
    poses = [p for p in _POSES if (p[0], p[1]) not in occupied]

    best: dict[tuple, float] = {}
    reverse: dict[tuple, list] = {p: [] for p in poses}
    for pose in poses:
        x, y, d = pose
        node = (x, y, d, carried, positions, progress)
        exits = []
        for action in _NAV:
            nxt, _ = advance(layout, node, action)
            npose = nxt[:3]
            if nxt[5] != progress:
                exits.append(_distance_field(layout, nxt[3], nxt[4], nxt[5]).get(npose, math.inf))
            elif npose != pose:
                reverse[npose].append(pose)
        dx, dy = DIR_VECS[d]
        ahead = (x + dx, y + dy)
        if op == "pickup" and carried < 0 and positions[target] == ahead:
            nxt, _ = advance(layout, node, PICK_UP)
            exits.append(_distance_field(layout, nxt[3], nxt[4], nxt[5]).get(pose, math.inf))
        if carried >= 0 and carried not in needed and not _is_wall(ahead) and ahead not in occupied:
            nxt, _ = advance(layout, node, DROP)
            exits.append(_distance_field(layout, nxt[3], nxt[4], nxt[5]).get(pose, math.inf))
        if exits:
            best[pose] = 1 + min(exits)

    heap = [(v, pose) for pose, v in best.items() if v < math.inf]
    heapq.heapify(heap)
    done: dict[tuple, int] = {}
    while heap:
        v, pose = heapq.heappop(heap)
        if pose in done:
            continue
        done[pose] = int(v)
        for prev in reverse[pose]:
            if prev not in done and v + 1 < best.get(prev, math.inf):
                best[prev] = v + 1
                heapq.heappush(heap, (v + 1, prev))
    return done


def node_distance(layout: Layout, node: Node) -> float:
    x, y, d, carried, positions, progress = node
    return _distance_field(layout, carried, positions, progress).get((x, y, d), math.inf)


def distance(state: GridState) -> float:
    """Fewest primitive actions that complete the task from ``state``."""
    return node_distance(state.layout, state.node())


def optimal_action(state: GridState) -> str | None:
    """First action, in ``ACTIONS`` order, on a shortest plan."""
    layout, node = state.layout, state.node()
    d = node_distance(layout, node)
    if d == 0 or d == math.inf:
        return None
    for action in ACTIONS:
        nxt, _ = advance(layout, node, action)
        if node_distance(layout, nxt) == d - 1:
            return action
    return None


# --------------------------------------------------------------------------
# environment API


def step(state: GridState, action: str) -> EnvStepOutcome:
    """Apply ``action`` to ``state`` in place."""
    from lac.gridworld.render import render_observation

    if state.done:
        raise RuntimeError("episode already finished")
    nxt, valid = advance(state.layout, state.node(), action.strip())
    state.set_node(nxt)
    text = render_observation(state) if valid else INVALID_OBSERVATION
    reward = 1.0 if state.done else 0.0
    return EnvStepOutcome(text, reward, state.done)


def _sample_state(rng: random.Random, seed: int, kind: TaskKind) -> GridState:
    descriptors = [WorldObject(c, k) for c in COLORS for k in KINDS]
    targets = tuple(rng.sample(descriptors, kind.n_targets))
    pool = [o for o in descriptors if o not in targets]
    distractors = [rng.choice(pool) for _ in range(rng.randint(2, 5))]
    objects = targets + tuple(distractors)
    tiles = [(x, y) for x in range(1, WIDTH - 1) for y in range(1, HEIGHT - 1)]
    spots = rng.sample(tiles, len(objects) + 1)
    return GridState(
        agent_pos=spots[0],
        agent_dir=rng.randrange(4),
        objects=objects,
        positions=tuple(spots[1:]),
        task=TaskSpec(kind, targets),
        rng_seed=seed,
    )


def reset(seed: int, task_kind: str | TaskKind = TaskKind.GOTO) -> tuple[Goal, str, GridState]:
    """Seeded initial state: target(s) plus 2-5 distractors, solvable, not already solved."""
    from lac.gridworld.render import render_observation

    kind = TaskKind.parse(task_kind)
    rng = random.Random(f"{kind.value}:{seed}")
    while True:
        state = _sample_state(rng, seed, kind)
        d = distance(state)
        if 0 < d < math.inf:
            break
    return Goal(state.task.goal_text()), render_observation(state), state


class GridWorldEnv:
    """Stateful wrapper used by the harness; keeps the action log for oracles."""

    def __init__(self):
        self.state: GridState | None = None
        self.initial_state: GridState | None = None
        self.goal: Goal | None = None
        self.actions: list[str] = []

    def reset(self, seed: int, task: str | TaskKind = TaskKind.GOTO) -> tuple[Goal, str]:
        goal, obs, state = reset(seed, task)
        self.goal, self.state = goal, state
        self.initial_state = state.copy()
        self.actions = []
        return goal, obs

    def step(self, action: str) -> EnvStepOutcome:
        if self.state is None:
            raise RuntimeError("reset() must be called first")
        outcome = step(self.state, action)
        self.actions.append(action.strip())
        return outcome

    def close(self) -> None:
        pass
