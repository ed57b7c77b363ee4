"""Line-delimited JSON protocol for environments that run in another process.

Engine to environment::

    {"type": "reset", "seed": 7, "task": "GoTo"}
    {"type": "step", "action": "turn left"}

Environment to engine::

    {"type": "obs", "goal": "go to the red ball", "text": "...", "reward": 0.0, "done": false}

``goal`` is required in the reply to ``reset`` and ignored otherwise. One
message per line, UTF-8. Anything else is a protocol violation.
"""

from __future__ import annotations

import json
import math
import queue
import subprocess
import sys
import threading
from typing import IO, Protocol, Sequence

from lac.core import Goal
from lac.gridworld.env import EnvStepOutcome


class EnvProtocolError(RuntimeError):
    """The environment process misbehaved or went away."""


class Environment(Protocol):
    def reset(self, seed: int, task: str) -> tuple[Goal, str]: ...

    def step(self, action: str) -> EnvStepOutcome: ...

    def close(self) -> None: ...


def parse_obs(line: str, need_goal: bool) -> tuple[str | None, EnvStepOutcome]:
    try:
        msg = json.loads(line)
    except json.JSONDecodeError as exc:
        raise EnvProtocolError(f"environment sent invalid JSON: {line[:80]!r}") from exc
    if not isinstance(msg, dict) or msg.get("type") != "obs":
        raise EnvProtocolError(f"expected an obs message, got {line[:80]!r}")
    text, reward, done = msg.get("text"), msg.get("reward"), msg.get("done")
    if not isinstance(text, str) or not isinstance(done, bool):
        raise EnvProtocolError("obs message needs string 'text' and boolean 'done'")
    if isinstance(reward, bool) or not isinstance(reward, (int, float)) or not 0.0 <= reward <= 1.0:
        raise EnvProtocolError("obs reward must be a number in [0, 1]")
    goal = msg.get("goal")
    if need_goal and (not isinstance(goal, str) or not goal.strip()):
        raise EnvProtocolError("reset reply must carry a non-empty 'goal'")
    return goal, EnvStepOutcome(text, float(reward), done)


class SubprocessEnv:
    """Environment adapter talking to ``command`` over stdin/stdout."""

    def __init__(self, command: Sequence[str], timeout: float = 30.0):
        if not command:
            raise ValueError("command must be non-empty")
        self.command = list(command)
        self.timeout = timeout
        self._proc: subprocess.Popen | None = None
        self._lines: queue.Queue = queue.Queue()

    def _start(self) -> None:
        self._proc = subprocess.Popen(
            self.command,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            encoding="utf-8",
            bufsize=1,
        )
        lines = self._lines = queue.Queue()
        stdout = self._proc.stdout

        def pump():
            for line in stdout:
                lines.put(line)
            lines.put(None)

        threading.Thread(target=pump, daemon=True).start()

    def _exchange(self, msg: dict, need_goal: bool = False):
        if self._proc is None or self._proc.poll() is not None:
            self._start()
        try:
            self._proc.stdin.write(json.dumps(msg) + "\n")
            self._proc.stdin.flush()
        except OSError as exc:
            raise EnvProtocolError(f"environment process not writable: {exc}") from exc
        try:
            line = self._lines.get(timeout=self.timeout)
        except queue.Empty:
            raise EnvProtocolError(f"no reply from environment within {self.timeout}s") from None
        if line is None:
            raise EnvProtocolError("environment process closed its output")
        return parse_obs(line, need_goal)

    def reset(self, seed: int, task: str) -> tuple[Goal, str]:
        goal, outcome = self._exchange({"type": "reset", "seed": seed, "task": task}, need_goal=True)
        return Goal(goal), outcome.observation_text

    def step(self, action: str) -> EnvStepOutcome:
        return self._exchange({"type": "step", "action": action})[1]

    def close(self) -> None:
        if self._proc is not None:
            if self._proc.stdin:
                self._proc.stdin.close()
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
            self._proc = None


def _reply(out: IO[str], msg: dict) -> None:
    out.write(json.dumps(msg) + "\n")
    out.flush()


def serve_stdio(env: Environment, inp: IO[str] = sys.stdin, out: IO[str] = sys.stdout) -> None:
    """Serve ``env`` over the protocol until ``inp`` is exhausted."""
    for line in inp:
        if not line.strip():
            continue
        try:
            msg = json.loads(line)
            kind = msg.get("type")
            if kind == "reset":
                seed = msg["seed"]
                if not isinstance(seed, int) or isinstance(seed, bool):
                    raise ValueError("seed must be an integer")
                goal, text = env.reset(seed, str(msg.get("task", "GoTo")))
                _reply(out, {"type": "obs", "goal": goal.text, "text": text, "reward": 0.0, "done": False})
            elif kind == "step":
                res = env.step(str(msg["action"]))
                reward = res.reward if math.isfinite(res.reward) else 0.0
                _reply(out, {"type": "obs", "text": res.observation_text, "reward": reward, "done": res.done})
            else:
                raise ValueError(f"unknown message type {kind!r}")
        except Exception as exc:  # report, keep serving
            _reply(out, {"type": "error", "message": str(exc)})
