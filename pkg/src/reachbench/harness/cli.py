"""Command line: run, compare, demo-gen, render-debug."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from ..env import generate_demos, tip_pose
from ..render import front_camera, render, wrist_camera, write_ppm
from .config import ConfigError, RunConfig, parse_config
from .runner import build_env, build_pipeline, compare, format_table, run_experiment, write_compare_csv


def load_config(args) -> RunConfig:
    text = Path(args.config).read_text(encoding="utf-8") if args.config else ""
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["run.seed"] = str(args.seed)
    if getattr(args, "scale", None) is not None:
        overrides["run.scale"] = args.scale
    if getattr(args, "out", None) is not None:
        overrides["run.out"] = args.out
    for item in getattr(args, "set", None) or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        overrides[key.strip()] = value.strip()
    return parse_config(text, overrides)


def cmd_run(args) -> int:
    config = load_config(args)
    status, metrics = run_experiment(config)
    final = metrics.success_rate[-1] if len(metrics) else float("nan")
    print(f"{config.run.out}: {len(metrics)} episodes, final windowed success {final:.3f}"
          + ("" if status == 0 else " (FAILED)"))
    return status


def cmd_compare(args) -> int:
    checkpoints = tuple(args.checkpoints) if args.checkpoints else None
    cps, rows = compare(args.runs, checkpoints, scale=args.scale or "paper")
    sys.stdout.write(format_table(cps, rows))
    if args.csv:
        write_compare_csv(cps, rows, args.csv)
    return 0


def cmd_demo_gen(args) -> int:
    config = load_config(args)
    rng = np.random.default_rng(config.run.seed)
    env = build_env(config)
    pipeline = build_pipeline(config, rng)
    demos = generate_demos(env, args.episodes or config.run.demo_episodes, pipeline, rng)
    out = Path(config.run.out)
    out.mkdir(parents=True, exist_ok=True)
    arrays = {"actions": np.array([t.action for t in demos]),
              "rewards": np.array([t.reward for t in demos]),
              "dones": np.array([t.done for t in demos], dtype=np.float64)}
    for key in demos[0].obs:
        arrays[f"obs_{key}"] = np.array([t.obs[key] for t in demos])
        arrays[f"next_obs_{key}"] = np.array([t.next_obs[key] for t in demos])
    np.savez(out / "demos.npz", **arrays)
    print(f"{len(demos)} demo transitions written to {out / 'demos.npz'}")
    return 0


def cmd_render_debug(args) -> int:
    config = load_config(args)
    rng = np.random.default_rng(config.run.seed)
    env = build_env(config)
    out = Path(config.run.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(args.frames):
        state = env.reset(rng)
        eps = env.task.epsilon
        write_ppm(render(state, env.chain, front_camera(), eps), out / f"front-{i:03d}.ppm")
        wrist = wrist_camera(tip_pose(env.chain, state.joints))
        write_ppm(render(state, env.chain, wrist, eps), out / f"wrist-{i:03d}.ppm")
    print(f"{2 * args.frames} frames written to {out}")
    return 0


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="config file (key = value lines)")
    p.add_argument("--seed", type=int, help="override run.seed")
    p.add_argument("--out", metavar="DIR", help="output directory")
    p.add_argument("--scale", choices=("paper", "reduced"), help="scale preset")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="reachbench", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="train one configuration and write its artifacts")
    _common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="tabulate windowed success of finished runs")
    p.add_argument("runs", nargs="+", metavar="RUN_DIR")
    p.add_argument("--checkpoints", type=int, nargs="+", metavar="EPISODE")
    p.add_argument("--scale", choices=("paper", "reduced"))
    p.add_argument("--csv", metavar="PATH", help="also write the table as CSV")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("demo-gen", help="generate expert demonstrations to demos.npz")
    _common(p)
    p.add_argument("--episodes", type=int, help="number of successful demo episodes")
    p.set_defaults(func=cmd_demo_gen)

    p = sub.add_parser("render-debug", help="write front and wrist frames as PPM")
    _common(p)
    p.add_argument("--frames", type=int, default=4)
    p.set_defaults(func=cmd_render_debug)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
