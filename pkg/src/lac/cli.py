"""Command line entry point.

Exit codes: 0 success (for ``run``: the episode succeeded), 1 the episode
failed, 2 configuration or input error.
"""

from __future__ import annotations

import argparse
import json
import logging
import shlex
import sys
from pathlib import Path

from lac.core import ConfigurationError, Mode, alpha_from_json, alpha_to_json
from lac.critic import MarkerPair
from lac.world_model import RolloutConfig

EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 1, 2

EPILOG = """\
exit codes:
  0  success (run: the episode reached the goal; eval/analyze/demo: completed)
  1  run: the episode failed
  2  configuration or input error

environment:
  LAC_BACKEND_URL, LAC_API_KEY, LAC_MODEL configure the http backend.
"""


def _add_engine_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--manifest", help="JSON manifest; flags given here override its values")
    p.add_argument("--env", choices=["gridworld", "subprocess"], help="environment (default gridworld)")
    p.add_argument("--env-command", help='command for --env subprocess, e.g. "python3 -m lac.gridworld"')
    p.add_argument("--backend", help="oracle | scripted | http (default oracle)")
    p.add_argument("--rules", help="rules JSON for --backend scripted")
    p.add_argument("--base-url", help="http backend base URL (or LAC_BACKEND_URL)")
    p.add_argument("--model", help="http backend model name (or LAC_MODEL)")
    p.add_argument("--mode", help="full | no-critic | critic-only | no-rollout | no-reflection | q-variant | direct-eval (default full)")
    p.add_argument("--alpha", help="critic weight, >= 0 or 'critic_only' (default 1.0)")
    p.add_argument("--n", type=int, help="candidate actions per step (default 5)")
    p.add_argument("--max-depth", type=int, help="rollout depth (default 4)")
    p.add_argument("--horizon", type=int, help="step limit (default from --profile)")
    p.add_argument("--profile", choices=["babyai", "alfworld", "webshop"], help="horizon profile (default babyai)")
    p.add_argument("--epsilon", type=float, help="oracle prior corruption rate (default 0)")
    p.add_argument("--critic-noise", type=float, help="oracle critic label-flip rate (default 0)")
    p.add_argument("--noise-seed", type=int, help="oracle noise seed (default 0)")
    p.add_argument("--out", help="output path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lac",
        description="Actor-critic decision engine for language-model agents.",
        epilog=EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one episode", epilog=EPILOG,
                         formatter_class=argparse.RawDescriptionHelpFormatter)
    _add_engine_flags(run)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--task", "--tasks", dest="task", default="GoTo", help="task kind (default GoTo)")

    ev = sub.add_parser("eval", help="run a batch from a manifest", epilog=EPILOG,
                        formatter_class=argparse.RawDescriptionHelpFormatter)
    ev.add_argument("manifest", nargs="?")
    _add_engine_flags(ev)
    ev.add_argument("--workers", type=int, help="episodes run concurrently")

    an = sub.add_parser("analyze", help="statistics and charts from a trace file")
    an.add_argument("--in", dest="inp", required=True, help="trace JSONL")
    an.add_argument("--out", required=True, help="output directory")

    demo = sub.add_parser("demo", help="scripted example where the critic overrules the prior")
    demo.add_argument("--alpha", default="1.0")
    return parser


# --------------------------------------------------------------------------
# flag/manifest merging


def _read_manifest(path: str | None) -> tuple[dict, Path | None]:
    if not path:
        return {}, None
    p = Path(path)
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read manifest {p}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigurationError("manifest must be a JSON object")
    return data, p.parent


def _merge(args, data: dict) -> dict:
    """Apply command line flags on top of manifest ``data``."""
    data = dict(data)
    configs = data.get("configs", data.get("config", {}))
    configs = [dict(c) for c in (configs if isinstance(configs, list) else [configs])]
    overrides = {
        "mode": args.mode,
        "alpha": args.alpha,
        "num_candidates": args.n,
        "max_depth": args.max_depth,
        "horizon": args.horizon,
        "profile": args.profile,
    }
    overrides = {k: v for k, v in overrides.items() if v is not None}
    for c in configs:
        c.update(overrides)
        if "label" in c and overrides:
            del c["label"]
    data.pop("config", None)
    data["configs"] = configs

    backend = dict(data.get("backend", {"type": "oracle"}))
    if args.backend:
        backend = {"type": args.backend} if args.backend != backend.get("type") else backend
    for key, value in (
        ("rules", args.rules),
        ("base_url", args.base_url),
        ("model", args.model),
        ("epsilon", args.epsilon),
        ("critic_noise", args.critic_noise),
        ("noise_seed", args.noise_seed),
    ):
        if value is not None:
            backend[key] = value
    data["backend"] = backend

    env = dict(data.get("env", {"type": "gridworld"}))
    if args.env:
        env = {"type": args.env}
    if args.env_command:
        env["command"] = shlex.split(args.env_command)
    data["env"] = env
    return data


def _warn_ignored_alpha(args, cfgs) -> None:
    if args.alpha is None:
        return
    for c in cfgs:
        if c.mode in (Mode.NO_CRITIC, Mode.CRITIC_ONLY):
            print(f"warning: --alpha is ignored in mode {c.mode.value}", file=sys.stderr)


# --------------------------------------------------------------------------
# subcommands


def cmd_run(args) -> int:
    from lac.core import EpisodeResult
    from lac.harness import RunManifest, backend_factory, make_env, run_episode

    data, base = _read_manifest(args.manifest)
    manifest = RunManifest.from_dict(_merge(args, data), base)
    if len(manifest.configs) != 1:
        raise ConfigurationError("run takes exactly one config; use eval for several")
    cfg = manifest.configs[0]
    _warn_ignored_alpha(args, [cfg])
    build = backend_factory(manifest.backend)
    env = make_env(manifest.env)
    out = open(args.out, "w", encoding="utf-8", newline="\n") if args.out else None
    try:
        def stream(record):
            if out:
                out.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")
                out.flush()

        result: EpisodeResult = run_episode(env, cfg, build(env), args.seed, args.task, on_record=stream)
        if out:
            out.write(json.dumps(result.to_dict(), sort_keys=True) + "\n")
    finally:
        env.close()
        if out:
            out.close()
    print(
        f"success={str(result.success).lower()} reward={result.reward:.3f} "
        f"steps={result.steps_used} tokens={result.tokens_used}"
    )
    if result.error:
        print(f"error: {result.error}", file=sys.stderr)
    return EXIT_OK if result.success else EXIT_FAILED


def cmd_eval(args) -> int:
    from lac.harness import RunManifest, format_summary, run_batch

    if not args.manifest:
        raise ConfigurationError("eval needs a manifest")
    data, base = _read_manifest(args.manifest)
    data = _merge(args, data)
    if args.out:
        data["output"] = str(Path(args.out).resolve())
    if args.workers is not None:
        data["workers"] = args.workers
    manifest = RunManifest.from_dict(data, base)
    _warn_ignored_alpha(args, manifest.configs)
    rows = run_batch(manifest)
    if any(r.episodes for r in rows):
        print(format_summary(rows))
    else:
        print("no episodes")
    return EXIT_OK


def cmd_analyze(args) -> int:
    from lac.analysis import analyze, emit_plots, load_traces

    src = Path(args.inp)
    if not src.is_file():
        raise ConfigurationError(f"trace file {src} not found")
    traces = load_traces(src)
    bundle = analyze(traces)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(
        json.dumps(bundle.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    emit_plots(bundle, out)
    conf = bundle.confidence
    print(
        f"episodes={len(traces.episodes)} skipped_lines={traces.skipped} "
        f"decisions={conf.decisions if conf else 0}"
    )
    for row in bundle.cost:
        print(f"{row.label} [{row.group}]: episodes={row.episodes} mean_steps={row.mean_steps:.2f} "
              f"mean_tokens={row.mean_tokens:.1f}")
    return EXIT_OK


def cmd_demo(args) -> int:
    from lac.demo import GOAL, demo_backend, demo_history
    from lac.harness import EngineConfig, decide_step

    alpha = alpha_from_json(args.alpha)
    cfg = EngineConfig(alpha=alpha, rollout=RolloutConfig(), markers=MarkerPair())
    action, record = decide_step(demo_history(), cfg, demo_backend())
    priors = [c.prior_logprob for c in record.candidates]
    prior_best = record.candidates[priors.index(max(priors))].action
    print(f"goal: {GOAL}    alpha={alpha_to_json(alpha)}")
    print(f"{'candidate':<36}{'log prior':>10}{'Q':>8}{'improved':>10}  rollout")
    for c, p in zip(record.candidates, record.improved.candidate_probs):
        r = c.rollout
        print(f"{c.action:<36}{c.prior_logprob:>10.3f}{c.q_value:>8.3f}{p:>10.3f}  "
              f"{len(r.steps)} step(s), {r.terminated_by.value}")
    print(f"prior choice:  {prior_best}")
    print(f"chosen action: {action}")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "eval": cmd_eval, "analyze": cmd_analyze, "demo": cmd_demo}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigurationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
