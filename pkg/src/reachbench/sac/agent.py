"""Soft Actor-Critic with twin critics, polyak targets and a learned temperature."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from ..autodiff import tensor as T
from ..autodiff.layers import MLP
from ..autodiff.params import NetParams, adam_step, blend_into
from ..autodiff.tensor import Tape, Tensor
from .replay import Batch, ReplayBuffer

ACTION_DIM = 6
LOG_STD_MIN, LOG_STD_MAX = -20.0, 2.0
TANH_EPS = 1e-6
PRE_TANH_LIMIT = 18.0
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class SacConfig:
    gamma: float = 0.95
    init_temperature: float = 0.2
    temperature_lr: float = 1e-4
    tau: float = 0.005
    actor_lr: float = 0.005
    critic_lr: float = 0.005
    buffer_size: int = 100_000
    batch_size: int = 32
    episodes: int = 30_000
    steps_per_episode: int = 100
    target_entropy: float = -6.0
    update_every: int = 1
    warmup_steps: int = 1000
    hidden: tuple[int, ...] = (256, 256)
    learn_temperature: bool = True

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must be in [0, 1]")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must be in (0, 1]")
        if min(self.temperature_lr, self.actor_lr, self.critic_lr) < 0:
            raise ValueError("learning rates must be non-negative")
        if self.init_temperature <= 0:
            raise ValueError("init_temperature must be positive")
        if not 1 <= self.batch_size <= self.buffer_size:
            raise ValueError("need 1 <= batch_size <= buffer_size")
        if self.episodes < 0 or self.steps_per_episode < 1 or self.update_every < 1 or self.warmup_steps < 0:
            raise ValueError("episode counts and step counts must be positive")
        if not self.hidden or min(self.hidden) < 1:
            raise ValueError("hidden widths must be positive")


class Features(Protocol):
    dim: int
    params: NetParams | None

    def __call__(self, obs: dict[str, np.ndarray], tape: Tape | None, trainable: bool) -> Tensor: ...


class VectorFeatures:
    """Observations that already are feature vectors (key ``vec``)."""

    params = None

    def __init__(self, dim: int):
        self.dim = dim

    def __call__(self, obs, tape=None, trainable=True) -> Tensor:
        return Tensor(obs["vec"])


def squashed_gaussian(mean: Tensor, log_std: Tensor, noise: np.ndarray) -> tuple[Tensor, Tensor]:
    """Reparameterized tanh-Gaussian sample and its log-density (summed over action dims).

    ``noise`` is the standard-normal draw; zeros give the deterministic (mode) action.
    """
    std = T.exp(log_std)
    # |pre| <= 18 keeps tanh strictly inside (-1, 1) in float64
    pre = T.clip(mean + std * noise, -PRE_TANH_LIMIT, PRE_TANH_LIMIT)
    action = T.tanh(pre)
    gauss = T.sum(-0.5 * noise * noise - HALF_LOG_2PI - log_std, axis=-1)
    correction = T.sum(T.log(1.0 - T.square(action) + TANH_EPS), axis=-1)
    return action, gauss - correction


def log_prob_of_action(action, mean, log_std) -> np.ndarray:
    """Density of the squashed Gaussian at a given action (numpy, for checks)."""
    a = np.asarray(action, dtype=np.float64)
    pre = np.arctanh(a)
    z = (pre - mean) / np.exp(log_std)
    return (-0.5 * z * z - HALF_LOG_2PI - log_std - np.log(1.0 - a * a + TANH_EPS)).sum(axis=-1)


def polyak_update(target: NetParams, online: NetParams, tau: float) -> None:
    """target <- (1 - tau) * target + tau * online."""
    blend_into(target, online, keep=1.0 - tau)


@dataclass
class UpdateInfo:
    critic_loss: float
    actor_loss: float
    temperature_loss: float
    alpha: float
    extras: dict[str, float] = field(default_factory=dict)


class SacAgent:
    """``action_mask`` marks the action components that affect the environment.

    Critics only see masked actions, so commands to locked joints carry no signal
    (expert demos leave them at exactly 0, agent actions do not).
    """

    def __init__(self, features: Features, config: SacConfig, rng: np.random.Generator,
                 contrastive=None, action_mask: np.ndarray | None = None):
        self.config = config
        self.features = features
        self.contrastive = contrastive
        self.action_mask = None
        if action_mask is not None:
            mask = np.asarray(action_mask, dtype=np.float64)
            if mask.shape != (ACTION_DIM,):
                raise ValueError(f"action_mask must have shape ({ACTION_DIM},)")
            if not mask.all():
                self.action_mask = mask
        h = config.hidden
        self.policy_params = NetParams()
        self.policy = MLP(self.policy_params, "pi", features.dim, h, 2 * ACTION_DIM, rng, out_scale=0.01)
        self.critic_params = NetParams()
        self.q1 = MLP(self.critic_params, "q1", features.dim + ACTION_DIM, h, 1, rng)
        self.q2 = MLP(self.critic_params, "q2", features.dim + ACTION_DIM, h, 1, rng)
        self.target_params = self.critic_params.copy()
        self.target_q1 = MLP.__new__(MLP)
        self.target_q2 = MLP.__new__(MLP)
        _rebind(self.target_q1, self.q1, self.target_params)
        _rebind(self.target_q2, self.q2, self.target_params)
        self.temperature = NetParams()
        self.temperature.add("log_alpha", np.array(math.log(config.init_temperature)))
        self.updates = 0

    @property
    def alpha(self) -> float:
        return float(np.exp(self.temperature["log_alpha"]).item())

    # -- acting ------------------------------------------------------------

    def policy_head(self, feats, tape: Tape | None = None, trainable: bool = True) -> tuple[Tensor, Tensor]:
        out = self.policy(feats, tape, trainable)
        return out[:, :ACTION_DIM], T.clip(out[:, ACTION_DIM:], LOG_STD_MIN, LOG_STD_MAX)

    def sample_action(self, obs: dict[str, np.ndarray], rng: np.random.Generator,
                      deterministic: bool = False) -> tuple[np.ndarray, float]:
        for v in obs.values():
            if np.issubdtype(np.asarray(v).dtype, np.floating) and not np.all(np.isfinite(v)):
                raise ValueError("observation contains non-finite values")
        batch = {k: np.asarray(v)[None] for k, v in obs.items()}
        feats = self.features(batch, None, False)
        if feats.shape[1] != self.features.dim:
            raise ValueError(f"observation features have dimension {feats.shape[1]}, policy expects {self.features.dim}")
        mean, log_std = self.policy_head(feats)
        noise = np.zeros(mean.shape) if deterministic else rng.standard_normal(mean.shape)
        action, logp = squashed_gaussian(mean, log_std, noise)
        return action.value[0], float(logp.value[0])

    # -- learning ----------------------------------------------------------

    def _critic_input(self, feats: Tensor, actions: Tensor) -> Tensor:
        if self.action_mask is not None:
            actions = actions * self.action_mask
        return T.concat([feats, actions], axis=1)

    def critic_targets(self, next_feats, rewards, dones, alpha: float | None = None,
                       rng: np.random.Generator | None = None, noise: np.ndarray | None = None,
                       which: str = "min") -> np.ndarray:
        """y = r + gamma (1 - done) (Q'(s', a') - alpha log pi(a'|s')), a' ~ pi(.|s')."""
        alpha = self.alpha if alpha is None else alpha
        feats = T.as_tensor(next_feats)
        mean, log_std = self.policy_head(feats)
        if noise is None:
            noise = rng.standard_normal(mean.shape)
        a_next, logp = squashed_gaussian(mean, log_std, noise)
        sa = self._critic_input(feats, a_next)
        q1 = self.target_q1(sa).value[:, 0]
        q2 = self.target_q2(sa).value[:, 0]
        q = {"min": np.minimum(q1, q2), "q1": q1, "q2": q2}[which]
        return rewards + self.config.gamma * (1.0 - dones) * (q - alpha * logp.value)

    def update(self, replay: ReplayBuffer, rng: np.random.Generator) -> UpdateInfo | None:
        """One gradient step on critics, actor and temperature; None if replay is too small."""
        n = self.config.batch_size
        if len(replay) < n:
            return None
        return self.update_on_batch(replay.sample(n, rng), rng)

    def update_on_batch(self, batch: Batch, rng: np.random.Generator) -> UpdateInfo:
        cfg = self.config
        alpha = self.alpha
        enc_params = self.features.params

        next_feats = self.features(batch.next_obs, None, False)
        y = self.critic_targets(next_feats, batch.rewards, batch.dones, alpha, rng)

        tape = Tape()
        feats = self.features(batch.obs, tape, True)
        sa = self._critic_input(feats, Tensor(batch.actions))
        q1 = T.reshape(self.q1(sa, tape), (-1,))
        q2 = T.reshape(self.q2(sa, tape), (-1,))
        critic_loss = T.mean(T.square(q1 - y)) + T.mean(T.square(q2 - y))
        _check_finite("critic loss", critic_loss)
        tape.backward(critic_loss)
        adam_step(self.critic_params, cfg.critic_lr)
        if enc_params is not None:
            adam_step(enc_params, cfg.critic_lr)

        tape = Tape()
        obs_feats = Tensor(feats.value)
        mean, log_std = self.policy_head(obs_feats, tape)
        action, logp = squashed_gaussian(mean, log_std, rng.standard_normal(mean.shape))
        sa = self._critic_input(obs_feats, action)
        q = T.minimum(self.q1(sa, tape, trainable=False), self.q2(sa, tape, trainable=False))
        actor_loss = T.mean(alpha * logp - T.reshape(q, (-1,)))
        _check_finite("actor loss", actor_loss)
        tape.backward(actor_loss)
        adam_step(self.policy_params, cfg.actor_lr)

        # d/d(log alpha) of mean(-alpha (log pi + target_entropy))
        slack = float(np.mean(logp.value + cfg.target_entropy))
        temperature_loss = -alpha * slack
        if cfg.learn_temperature:
            self.temperature.entry("log_alpha").grad += -alpha * slack
            adam_step(self.temperature, cfg.temperature_lr)

        polyak_update(self.target_params, self.critic_params, cfg.tau)

        extras = {}
        if self.contrastive is not None:
            extras["contrastive_loss"] = self.contrastive(batch, rng)
            if not math.isfinite(extras["contrastive_loss"]):
                raise FloatingPointError(f"contrastive loss is not finite ({extras['contrastive_loss']})")
        self.updates += 1
        return UpdateInfo(float(critic_loss.value), float(actor_loss.value), temperature_loss,
                          self.alpha, extras)

    # -- checkpoints -------------------------------------------------------

    def networks(self) -> dict[str, NetParams]:
        return {"policy": self.policy_params, "critic": self.critic_params,
                "critic_target": self.target_params}


def _rebind(clone: MLP, source: MLP, params: NetParams) -> None:
    """Make ``clone`` a view of ``source``'s architecture over another parameter set."""
    clone.__dict__.update(source.__dict__)
    clone.layers = []
    for layer in source.layers:
        twin = type(layer).__new__(type(layer))
        twin.__dict__.update(layer.__dict__)
        twin.params = params
        clone.layers.append(twin)


def _check_finite(what: str, t: Tensor) -> None:
    if not np.all(np.isfinite(t.value)):
        raise FloatingPointError(f"{what} is not finite ({t.value})")
