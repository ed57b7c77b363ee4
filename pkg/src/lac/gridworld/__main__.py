"""Serve the gridworld over the stdio JSONL protocol: ``python -m lac.gridworld``."""

from lac.gridworld.env import GridWorldEnv
from lac.protocol import serve_stdio

if __name__ == "__main__":
    serve_stdio(GridWorldEnv())
