"""Observation pipelines: how the agent sees the reach task.

Each pipeline turns the environment state into an observation dict at reset
and after every step.  Vector pipelines emit ``{"vec": float64[d]}``; the
image pipelines store ``{"frames": uint8[6, 64, 64], "joints": float64[6]}``
so that encoders re-encode fresh frames at every update.
"""
from __future__ import annotations

import numpy as np

from .autodiff import tensor as T
from .autodiff.tensor import Tape, Tensor
from .env import ReachEnv, tip_pose
from .perception import BallNotDetected, DistanceRing, locate_ball, pipeline1_observe, pipeline2_observe
from .render import concat_channels, front_camera, render, to_uint8, wrist_camera
from .repr_learn import ContrastiveEncoder, CropSpec, RawCnn, contrastive_step
from .sac.agent import VectorFeatures

PIPELINES = ("cheat_coords", "box_distance", "ball_pixels", "raw_image", "contrastive")


class CheatCoords:
    """Ground-truth target and tip coordinates plus joints (12 values)."""

    name = "cheat_coords"
    dim = 12

    def reset(self, env: ReachEnv, rng: np.random.Generator) -> dict[str, np.ndarray]:
        env.reset(rng)
        return self.observe(env)

    def observe(self, env: ReachEnv) -> dict[str, np.ndarray]:
        s = env.state
        return {"vec": np.concatenate([s.target, s.tip, s.joints])}

    def features(self):
        return VectorFeatures(self.dim)


class BoxDistance:
    """Ring of the five latest ball-head image distances, refreshed every 5 steps, plus joints."""

    name = "box_distance"
    dim = 11

    def __init__(self, camera=None, period: int = 5):
        self.camera = camera if camera is not None else front_camera()
        self.period = period
        self.ring = DistanceRing()

    def reset(self, env: ReachEnv, rng: np.random.Generator) -> dict[str, np.ndarray]:
        env.reset(rng)
        self.ring.reset()
        return self.observe(env)

    def observe(self, env: ReachEnv) -> dict[str, np.ndarray]:
        s = env.state
        frame = None
        if s.step_index % self.period == 0:
            frame = render(s, env.chain, self.camera, env.task.epsilon)
        return {"vec": pipeline1_observe(frame, s.joints, self.ring, s.step_index, self.period)}

    def features(self):
        return VectorFeatures(self.dim)


class BallPixels:
    """Ball box centre detected once per episode on the reset frame, plus joints (8 values)."""

    name = "ball_pixels"
    dim = 8

    def __init__(self, camera=None, max_resamples: int = 20):
        self.camera = camera if camera is not None else front_camera()
        self.max_resamples = max_resamples
        self.cached_xy: np.ndarray | None = None

    def reset(self, env: ReachEnv, rng: np.random.Generator) -> dict[str, np.ndarray]:
        env.reset(rng)
        for _ in range(self.max_resamples + 1):
            try:
                self.cached_xy = locate_ball(render(env.state, env.chain, self.camera, env.task.epsilon))
                return self.observe(env)
            except BallNotDetected:
                env.resample_target(rng)
        raise BallNotDetected(f"ball undetected after {self.max_resamples} target resamples")

    def observe(self, env: ReachEnv) -> dict[str, np.ndarray]:
        return {"vec": pipeline2_observe(self.cached_xy, env.state.joints)}

    def features(self):
        return VectorFeatures(self.dim)


class ImageFeatures:
    """Encoder output over stacked front+wrist frames, concatenated with the joints."""

    def __init__(self, encoder, critic_grad: bool = True):
        self.encoder = encoder
        self.critic_grad = critic_grad
        self.dim = encoder.out_dim + 6
        self.params = encoder.params if critic_grad else None

    def __call__(self, obs, tape: Tape | None = None, trainable: bool = True) -> Tensor:
        frames = obs["frames"].astype(np.float64) / 255.0
        use_tape = tape if (trainable and self.critic_grad) else None
        feats = self.encoder(frames, use_tape, trainable)
        return T.concat([feats, Tensor(obs["joints"])], axis=1)


class _ImagePipeline:
    dim: int

    def __init__(self, encoder, front=None):
        self.encoder = encoder
        self.front = front if front is not None else front_camera()

    def frames(self, env: ReachEnv) -> tuple[np.ndarray, np.ndarray]:
        s = env.state
        eps = env.task.epsilon
        front = render(s, env.chain, self.front, eps)
        wrist = render(s, env.chain, wrist_camera(tip_pose(env.chain, s.joints)), eps)
        return front, wrist

    def reset(self, env: ReachEnv, rng: np.random.Generator) -> dict[str, np.ndarray]:
        env.reset(rng)
        return self.observe(env)

    def observe(self, env: ReachEnv) -> dict[str, np.ndarray]:
        front, wrist = self.frames(env)
        return {"frames": to_uint8(concat_channels(front, wrist)), "joints": env.state.joints.copy()}


class RawImage(_ImagePipeline):
    name = "raw_image"

    def __init__(self, rng: np.random.Generator, front=None):
        super().__init__(RawCnn(rng), front)
        self.dim = self.encoder.out_dim + 6

    def features(self):
        return ImageFeatures(self.encoder)


class Contrastive(_ImagePipeline):
    name = "contrastive"

    def __init__(self, rng: np.random.Generator, front=None, momentum: float = 0.99,
                 crop_size: int = 56, contrastive_lr: float = 1e-3, critic_grad: bool = True,
                 learn_w: bool = True):
        super().__init__(ContrastiveEncoder(rng, momentum=momentum, learn_w=learn_w), front)
        self.dim = self.encoder.out_dim + 6
        self.crop = CropSpec(crop_size=crop_size)
        self.contrastive_lr = contrastive_lr
        self.critic_grad = critic_grad

    def features(self):
        return ImageFeatures(self.encoder, self.critic_grad)

    def contrastive_hook(self):
        """Per-update contrastive step on the agent's sampled batch."""
        def hook(batch, rng):
            frames = batch.obs["frames"].astype(np.float64) / 255.0
            return contrastive_step(self.encoder, frames, rng, self.contrastive_lr, self.crop)
        return hook
