import io
import json
import sys

import pytest

from lac.gridworld import GridWorldEnv
from lac.protocol import EnvProtocolError, SubprocessEnv, parse_obs, serve_stdio


def test_parse_obs_valid():
    goal, out = parse_obs('{"type":"obs","goal":"g","text":"t","reward":1,"done":true}', True)
    assert goal == "g" and out.reward == 1.0 and out.done


@pytest.mark.parametrize("line", [
    "not json",
    '{"type":"error"}',
    '{"type":"obs","text":"t","reward":2,"done":false}',
    '{"type":"obs","text":"t","reward":true,"done":false}',
    '{"type":"obs","text":5,"reward":0,"done":false}',
    '{"type":"obs","text":"t","reward":0,"done":"no"}',
])
def test_parse_obs_rejects(line):
    with pytest.raises(EnvProtocolError):
        parse_obs(line, False)


def test_reset_reply_needs_goal():
    with pytest.raises(EnvProtocolError):
        parse_obs('{"type":"obs","text":"t","reward":0,"done":false}', True)


def test_serve_stdio_round_trip():
    inp = io.StringIO(
        '{"type":"reset","seed":0,"task":"GoTo"}\n\n{"type":"step","action":"turn left"}\n'
        '{"type":"jump"}\n{"type":"reset","seed":"x"}\n'
    )
    out = io.StringIO()
    serve_stdio(GridWorldEnv(), inp, out)
    replies = [json.loads(l) for l in out.getvalue().splitlines()]
    assert replies[0]["goal"] == "go to the blue ball"
    assert replies[1]["type"] == "obs" and replies[1]["done"] is False
    assert [r["type"] for r in replies[2:]] == ["error", "error"]


def test_subprocess_env_matches_in_process():
    env = SubprocessEnv([sys.executable, "-m", "lac.gridworld"])
    ref = GridWorldEnv()
    try:
        assert env.reset(4, "PickUp") == ref.reset(4, "PickUp")
        for a in ("turn left", "go forward", "pick up"):
            assert env.step(a) == ref.step(a)
    finally:
        env.close()


def test_subprocess_env_bad_process():
    env = SubprocessEnv([sys.executable, "-c", "print('garbage')"], timeout=10)
    with pytest.raises(EnvProtocolError):
        env.reset(0, "GoTo")
    env.close()
    silent = SubprocessEnv([sys.executable, "-c", "import time; time.sleep(2)"], timeout=0.3)
    with pytest.raises(EnvProtocolError):
        silent.reset(0, "GoTo")
    silent.close()
    with pytest.raises(ValueError):
        SubprocessEnv([])
