"""Episode loop: act, store, learn, record."""
from __future__ import annotations

import time
from typing import Callable

import numpy as np

from ..env import ReachEnv, Transition
from ..metrics import EpisodeRecord, MetricsLog
from .agent import SacAgent, SacConfig
from .replay import ReplayBuffer


class TrainingDiverged(FloatingPointError):
    pass


def train_loop(env: ReachEnv, pipeline, agent: SacAgent, replay: ReplayBuffer, config: SacConfig,
               rng: np.random.Generator, metrics_sink: Callable[[EpisodeRecord], None] | None = None,
               window: int = 100, clock: Callable[[], float] | None = None) -> MetricsLog:
    """Run ``config.episodes`` episodes and return their metrics.

    Uniform random actions are used for the first ``warmup_steps`` environment
    steps; afterwards one agent update runs every ``update_every`` steps.
    Transitions are stored with ``done`` set only for true terminations, not
    for time-limit truncation.  ``clock`` (ms) defaults to zero so that logs are
    reproducible; pass a real clock to record wall time.
    """
    log = MetricsLog(window=window)
    replay.end_preload()
    total_steps = 0
    for episode in range(config.episodes):
        t0 = clock() if clock else 0.0
        obs = pipeline.reset(env, rng)
        ret = 0.0
        done = False
        while not done:
            if total_steps < config.warmup_steps:
                action = rng.uniform(-1.0, 1.0, size=6)
            else:
                action, _ = agent.sample_action(obs, rng)
            _, reward, done = env.step(action)
            next_obs = pipeline.observe(env)
            terminal = done and env.is_success()
            replay.push(Transition(obs, action, reward, next_obs, terminal))
            obs = next_obs
            ret += reward
            total_steps += 1
            if total_steps > config.warmup_steps and total_steps % config.update_every == 0:
                try:
                    agent.update(replay, rng)
                except FloatingPointError as exc:
                    raise TrainingDiverged(
                        f"episode {episode}, step {env.state.step_index}, total steps {total_steps}: {exc}"
                    ) from exc
        wall = (clock() - t0) if clock else 0.0
        row = log.record(env.state.step_index, env.is_success(), ret, wall)
        if metrics_sink is not None:
            metrics_sink(row)
    return log
