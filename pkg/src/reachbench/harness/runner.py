"""Wire config -> env, pipeline, agent, replay; run; write artifacts."""
from __future__ import annotations

import csv
import logging
import time
import traceback
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..autodiff import load_checkpoint, save_checkpoint
from ..autodiff.params import NetParams
from ..env import KinematicChain, ReachEnv, generate_demos
from ..metrics import MetricsLog, episodes_to_reach, read_csv, write_csv, write_svg
from ..pipelines import BallPixels, BoxDistance, CheatCoords, Contrastive, RawImage
from ..sac import ReplayBuffer, SacAgent, train_loop
from .config import RunConfig, render_config

log = logging.getLogger(__name__)

METRICS_FILE = "metrics.csv"
CURVE_FILE = "curve.svg"
CONFIG_FILE = "resolved-config.ini"
FAILED_FILE = "FAILED"
RUN_LOG_FILE = "run.log"
CHECKPOINT_DIR = "checkpoints"


def build_env(config: RunConfig) -> ReachEnv:
    ch = config.chain
    limits = np.tile([-ch.joint_limit, ch.joint_limit], (6, 1))
    chain = KinematicChain.ur3(joint_limits=limits, v_max=np.full(6, ch.v_max), dt=ch.dt)
    return ReachEnv(chain, config.task_config, episode_len=config.sac.steps_per_episode,
                    check_reachable=True)


def build_pipeline(config: RunConfig, rng: np.random.Generator):
    r = config.run
    if r.pipeline == "cheat_coords":
        return CheatCoords()
    if r.pipeline == "box_distance":
        return BoxDistance()
    if r.pipeline == "ball_pixels":
        return BallPixels(max_resamples=r.max_resamples)
    if r.pipeline == "raw_image":
        return RawImage(rng)
    if r.pipeline == "contrastive":
        return Contrastive(rng, momentum=r.momentum, crop_size=r.crop_size,
                           contrastive_lr=r.contrastive_lr, critic_grad=r.encoder_critic_grad,
                           learn_w=r.learn_w)
    raise ValueError(f"unknown pipeline {r.pipeline!r}")


@dataclass
class Run:
    config: RunConfig
    env: ReachEnv
    pipeline: object
    agent: SacAgent
    replay: ReplayBuffer
    rng: np.random.Generator
    demo_transitions: int = 0


def build_run(config: RunConfig) -> Run:
    """Construct every component from one seeded generator, in a fixed order."""
    rng = np.random.default_rng(config.run.seed)
    env = build_env(config)
    pipeline = build_pipeline(config, rng)
    hook = pipeline.contrastive_hook() if isinstance(pipeline, Contrastive) else None
    agent = SacAgent(pipeline.features(), config.sac, rng, contrastive=hook,
                     action_mask=env.task.active_mask)
    replay = ReplayBuffer(config.sac.buffer_size)
    run = Run(config, env, pipeline, agent, replay, rng)
    if config.run.imitation and config.run.demo_episodes > 0:
        demos = generate_demos(env, config.run.demo_episodes, pipeline, rng)
        replay.extend(demos)
        run.demo_transitions = len(demos)
    replay.end_preload()
    return run


def networks(run: Run) -> dict[str, NetParams | dict[str, np.ndarray]]:
    out: dict = dict(run.agent.networks())
    out["temperature"] = run.agent.temperature
    enc = getattr(run.pipeline, "encoder", None)
    if enc is not None:
        out["encoder"] = enc.checkpoint_values()
    return out


def save_networks(run: Run, directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    for name, params in networks(run).items():
        save_checkpoint(params, directory / f"{name}.ckpt")


def load_networks(run: Run, directory: str | Path) -> None:
    """Restore parameters written by ``save_networks`` into a freshly built run."""
    directory = Path(directory)
    agent = run.agent
    agent.policy_params.load_values(load_checkpoint(directory / "policy.ckpt"))
    agent.critic_params.load_values(load_checkpoint(directory / "critic.ckpt"))
    agent.target_params.load_values(load_checkpoint(directory / "critic_target.ckpt"))
    agent.temperature.load_values(load_checkpoint(directory / "temperature.ckpt"))
    enc = getattr(run.pipeline, "encoder", None)
    if enc is not None:
        enc.load_values(load_checkpoint(directory / "encoder.ckpt"))


def _write_text(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")


def run_experiment(config: RunConfig, out_dir: str | Path | None = None) -> tuple[int, MetricsLog]:
    """Run one configuration and write its artifacts.

    Returns ``(status, log)``; status 0 on completion, 1 if any component
    raised, in which case the artifacts written so far are kept and a FAILED
    file holds the traceback.
    """
    out = Path(out_dir if out_dir is not None else config.run.out)
    out.mkdir(parents=True, exist_ok=True)
    for stale in (FAILED_FILE, METRICS_FILE, CURVE_FILE):
        (out / stale).unlink(missing_ok=True)
    _write_text(out / CONFIG_FILE, render_config(config))
    notes: list[str] = []
    metrics = MetricsLog(window=config.run.window)
    status = 0
    try:
        run = build_run(config)
        if config.run.imitation:
            notes.append(f"demo transitions preloaded: {run.demo_transitions} "
                         f"({config.run.demo_episodes} episodes)")
        log.info("run %s: %s", out, notes[-1] if notes else "no demos")
        every = config.run.checkpoint_every

        def sink(row):
            metrics.append(row)
            if every and (row.episode + 1) % every == 0:
                save_networks(run, out / CHECKPOINT_DIR / f"episode-{row.episode + 1}")

        clock = (lambda: time.perf_counter() * 1e3) if config.run.record_wall_clock else None
        train_loop(run.env, run.pipeline, run.agent, run.replay, config.sac, run.rng, sink,
                   window=config.run.window, clock=clock)
        save_networks(run, out / CHECKPOINT_DIR / "final")
    except Exception:  # noqa: BLE001 - any component error marks the run failed
        status = 1
        _write_text(out / FAILED_FILE, traceback.format_exc())
        notes.append(f"FAILED after {len(metrics)} episodes")
    if len(metrics):
        write_csv(metrics, out / METRICS_FILE)
        write_svg({config.run.pipeline: metrics.success_rate}, out / CURVE_FILE)
    notes.append(f"episodes completed: {len(metrics)}")
    _write_text(out / RUN_LOG_FILE, "\n".join(notes) + "\n")
    return status, metrics


# -- comparison -----------------------------------------------------------------

PAPER_CHECKPOINTS = (10_000, 20_000, 30_000)


def default_checkpoints(total_episodes: int, scale: str) -> tuple[int, ...]:
    """10k/20k/30k at paper scale; the same thirds of the budget otherwise."""
    if scale == "paper":
        return PAPER_CHECKPOINTS
    return tuple(total_episodes * k // 3 for k in (1, 2, 3))


def checkpoint_label(n: int) -> str:
    return f"{n // 1000}k" if n % 1000 == 0 and n >= 1000 else str(n)


@dataclass
class CompareRow:
    run: str
    values: list[float | None]
    episodes: int
    to_half: int | None


def compare(run_dirs, checkpoints: tuple[int, ...] | None = None,
            scale: str = "paper") -> tuple[tuple[int, ...], list[CompareRow]]:
    """Windowed success at fixed episode counts, one row per run; None beyond a run's length."""
    loaded = []
    for d in run_dirs:
        path = Path(d) / METRICS_FILE
        if not path.exists():
            raise FileNotFoundError(f"run {d}: missing {METRICS_FILE}")
        loaded.append((str(d), read_csv(path)))
    if checkpoints is None:
        longest = max(len(m) for _, m in loaded)
        checkpoints = default_checkpoints(longest, scale)
    rows = []
    for name, m in loaded:
        rates = m.success_rate
        vals = [float(rates[c - 1]) if 0 < c <= len(rates) else None for c in checkpoints]
        rows.append(CompareRow(name, vals, len(m), episodes_to_reach(rates, 0.5)))
    return checkpoints, rows


def format_table(checkpoints, rows: list[CompareRow]) -> str:
    headers = ["run"] + [checkpoint_label(c) for c in checkpoints] + ["episodes"]
    body = [[r.run] + ["-" if v is None else f"{v:.3f}" for v in r.values] + [str(r.episodes)]
            for r in rows]
    widths = [max(len(x) for x in col) for col in zip(headers, *body)]
    lines = ["  ".join(h.ljust(w) if i == 0 else h.rjust(w) for i, (h, w) in enumerate(zip(headers, widths)))]
    for line in body:
        lines.append("  ".join(c.ljust(w) if i == 0 else c.rjust(w)
                               for i, (c, w) in enumerate(zip(line, widths))))
    return "\n".join(lines) + "\n"


def write_compare_csv(checkpoints, rows: list[CompareRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run"] + [checkpoint_label(c) for c in checkpoints] + ["episodes"])
        for r in rows:
            w.writerow([r.run] + ["" if v is None else repr(v) for v in r.values] + [r.episodes])
