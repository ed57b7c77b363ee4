"""Text rendering of the agent's 7x7 egocentric view."""

from __future__ import annotations

import re

from lac.gridworld.env import DIR_VECS, GridState, _is_wall

VIEW_FORWARD = 6  # rows ahead of the agent's own row
VIEW_SIDE = 3  # columns to each side
EMPTY_VIEW = "You see nothing ahead."


def _steps(n: int, word: str) -> str:
    return f"{n} step{'s' if n != 1 else ''} {word}"


def relative(state: GridState, pos) -> tuple[int, int]:
    """(forward, right) offset of ``pos`` from the agent."""
    dx, dy = DIR_VECS[state.agent_dir]
    rx, ry = DIR_VECS[(state.agent_dir + 1) % 4]
    ox, oy = pos[0] - state.agent_pos[0], pos[1] - state.agent_pos[1]
    return ox * dx + oy * dy, ox * rx + oy * ry


def in_view(forward: int, right: int) -> bool:
    return 0 <= forward <= VIEW_FORWARD and abs(right) <= VIEW_SIDE and (forward, right) != (0, 0)


def describe_offset(forward: int, right: int) -> str:
    parts = []
    if right < 0:
        parts.append(_steps(-right, "left"))
    elif right > 0:
        parts.append(_steps(right, "right"))
    if forward > 0:
        parts.append(_steps(forward, "forward"))
    return " and ".join(parts)


def _wall_distance(state: GridState, vec) -> int:
    x, y = state.agent_pos
    n = 0
    while True:
        n += 1
        if _is_wall((x + vec[0] * n, y + vec[1] * n)):
            return n


def visible_objects(state: GridState) -> list[tuple[str, int, int]]:
    """(name, forward, right) for every object in view, in rendering order."""
    seen = []
    for obj, pos in zip(state.objects, state.positions):
        if pos is None:
            continue
        f, r = relative(state, pos)
        if in_view(f, r):
            seen.append((obj.name, f, r))
    # left to right, far rows first within a column
    seen.sort(key=lambda item: (item[2], -item[1], item[0]))
    return seen


def render_observation(state: GridState) -> str:
    d = state.agent_dir
    clauses = []
    left = _wall_distance(state, DIR_VECS[(d - 1) % 4])
    right = _wall_distance(state, DIR_VECS[(d + 1) % 4])
    ahead = _wall_distance(state, DIR_VECS[d])
    if left <= VIEW_SIDE:
        clauses.append(f"You see a wall {_steps(left, 'left')}")
    if right <= VIEW_SIDE:
        clauses.append(f"You see a wall {_steps(right, 'right')}")
    if ahead <= VIEW_FORWARD:
        clauses.append(f"You see a wall {_steps(ahead, 'forward')}")
    for name, f, r in visible_objects(state):
        clauses.append(f"You see a {name} {describe_offset(f, r)}")
    return ", ".join(clauses) if clauses else EMPTY_VIEW


_CLAUSE_RE = re.compile(
    r"You see a (?P<name>wall|\w+ \w+)"
    r"(?: (?P<l>\d+) steps? left| (?P<r>\d+) steps? right)?"
    r"(?:(?: and)? (?P<f>\d+) steps? forward)?$"
)


def parse_observation(text: str) -> list[tuple[str, int, int]]:
    """Inverse of ``render_observation``: (name, forward, right) per clause."""
    if text == EMPTY_VIEW:
        return []
    out = []
    for clause in text.split(", "):
        m = _CLAUSE_RE.match(clause)
        if not m:
            raise ValueError(f"unparseable clause {clause!r}")
        right = int(m["r"]) if m["r"] else -int(m["l"]) if m["l"] else 0
        out.append((m["name"], int(m["f"] or 0), right))
    return out
