"""Image encoders for the raw-image and contrastive pipelines."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import tensor as T
from .autodiff.layers import Conv2d, Dense
from .autodiff.params import NetParams, adam_step, blend_into
from .autodiff.tensor import Tape, Tensor
from .render import RESOLUTION, concat_channels


@dataclass(frozen=True)
class CropSpec:
    source_size: int = RESOLUTION
    crop_size: int = 56
    upscale: bool = True

    def __post_init__(self):
        if not 0 < self.crop_size <= self.source_size:
            raise ValueError(f"crop_size must be in (0, {self.source_size}]")


def _crop_one(image: np.ndarray, top: int, left: int, spec: CropSpec) -> np.ndarray:
    patch = image[..., top:top + spec.crop_size, left:left + spec.crop_size]
    if not spec.upscale:
        return patch
    idx = (np.arange(spec.source_size) * spec.crop_size) // spec.source_size
    return patch[..., idx[:, None], idx[None, :]]


def crop_offsets(rng: np.random.Generator, spec: CropSpec, n: int) -> np.ndarray:
    return rng.integers(0, spec.source_size - spec.crop_size + 1, size=(n, 2))


def random_crop(image: np.ndarray, spec: CropSpec, rng: np.random.Generator) -> np.ndarray:
    """Same crop offsets for every channel, nearest-neighbour resized back to full size."""
    if image.shape[-1] != spec.source_size or image.shape[-2] != spec.source_size:
        raise ValueError(f"expected {spec.source_size}x{spec.source_size} image, got {image.shape}")
    top, left = crop_offsets(rng, spec, 1)[0]
    return _crop_one(image, top, left, spec)


def random_crop_batch(images: np.ndarray, spec: CropSpec, rng: np.random.Generator) -> np.ndarray:
    offsets = crop_offsets(rng, spec, len(images))
    return np.stack([_crop_one(img, t, l, spec) for img, (t, l) in zip(images, offsets)])


class ConvTrunk:
    """conv(c->16, 5x5, /2) -> relu -> conv(16->32, 5x5, /2) [-> relu] -> flatten."""

    def __init__(self, params: NetParams, name: str, rng: np.random.Generator, in_channels: int = 6,
                 final_relu: bool = True, size: int = RESOLUTION):
        self.conv1 = Conv2d(params, f"{name}.conv1", in_channels, 16, 5, 2, rng)
        self.conv2 = Conv2d(params, f"{name}.conv2", 16, 32, 5, 2, rng)
        self.final_relu = final_relu
        side = self.conv2.out_size(self.conv1.out_size(size))
        self.out_dim = 32 * side * side

    def __call__(self, x, tape: Tape | None, trainable: bool) -> Tensor:
        h = T.relu(self.conv1(x, tape, trainable))
        h = self.conv2(h, tape, trainable)
        if self.final_relu:
            h = T.relu(h)
        return T.reshape(h, (h.shape[0], self.out_dim))


class RawCnn:
    """Two conv layers and two dense layers mapping a 6-channel frame to 3000 features."""

    def __init__(self, rng: np.random.Generator, hidden: int = 512, out_dim: int = 3000):
        self.params = NetParams()
        self.trunk = ConvTrunk(self.params, "raw", rng, final_relu=False)
        self.fc1 = Dense(self.params, "raw.fc1", self.trunk.out_dim, hidden, rng)
        self.fc2 = Dense(self.params, "raw.fc2", hidden, out_dim, rng)
        self.out_dim = out_dim

    def __call__(self, frames, tape: Tape | None = None, trainable: bool = True) -> Tensor:
        h = self.trunk(frames, tape, trainable)
        h = T.relu(self.fc1(h, tape, trainable))
        return self.fc2(h, tape, trainable)

    def checkpoint_values(self) -> dict[str, np.ndarray]:
        return self.params.values()

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        self.params.load_values(values)


class ContrastiveEncoder:
    """Query encoder, momentum key copy, and the bilinear similarity matrix W."""

    def __init__(self, rng: np.random.Generator, feature_dim: int = 50, momentum: float = 0.99,
                 learn_w: bool = True):
        self.params = NetParams()
        self.trunk = ConvTrunk(self.params, "enc", rng, final_relu=True)
        self.fc = Dense(self.params, "enc.fc", self.trunk.out_dim, feature_dim, rng)
        self.key_params = self.params.copy()
        self.bilinear = NetParams()
        self.bilinear.add("W", np.eye(feature_dim))
        self.out_dim = feature_dim
        self.momentum = momentum
        self.learn_w = learn_w

    def _forward(self, frames, tape, trainable):
        return self.fc(self.trunk(frames, tape, trainable), tape, trainable)

    def __call__(self, frames, tape: Tape | None = None, trainable: bool = True) -> Tensor:
        return self._forward(frames, tape, trainable)

    def encode_key(self, frames) -> np.ndarray:
        live = self.params
        try:
            _swap_values(self, self.key_params)
            return self._forward(frames, None, False).value
        finally:
            _swap_values(self, live)

    def momentum_update(self, m: float | None = None) -> None:
        momentum_update(self.key_params, self.params, self.momentum if m is None else m)

    def checkpoint_values(self) -> dict[str, np.ndarray]:
        out = {f"query.{k}": v for k, v in self.params.values().items()}
        out.update({f"key.{k}": v for k, v in self.key_params.values().items()})
        out["W"] = self.bilinear["W"]
        return out

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        self.params.load_values({k[6:]: v for k, v in values.items() if k.startswith("query.")})
        self.key_params.load_values({k[4:]: v for k, v in values.items() if k.startswith("key.")})
        self.bilinear.load_values({"W": values["W"]})


def _swap_values(enc: ContrastiveEncoder, params: NetParams) -> None:
    for layer in (enc.trunk.conv1, enc.trunk.conv2, enc.fc):
        layer.params = params


def momentum_update(key_params: NetParams, query_params: NetParams, m: float = 0.99) -> None:
    """key <- m * key + (1 - m) * query."""
    blend_into(key_params, query_params, keep=m)


def info_nce(q, k_pos, negatives, W) -> Tensor:
    """-log softmax of the positive bilinear logit against the negatives' logits."""
    q, W = T.as_tensor(q), T.as_tensor(W)
    if not isinstance(negatives, Tensor):
        negatives = np.asarray(negatives, dtype=np.float64).reshape(-1, q.shape[0])
    negatives = T.as_tensor(negatives)
    if negatives.shape[0] == 0:
        raise ValueError("info_nce needs at least one negative")
    keys = T.concat([T.reshape(T.as_tensor(k_pos), (1, -1)), negatives], axis=0)
    logits = T.matmul(T.reshape(q, (1, -1)), T.matmul(W, T.transpose(keys)))
    return -T.log_softmax(logits, axis=1)[0, 0]


def batch_info_nce(q: Tensor, k: Tensor, W: Tensor) -> Tensor:
    """Mean InfoNCE where row i's positive is key i and the other keys are its negatives."""
    logits = T.matmul(T.matmul(q, W), T.transpose(k))
    n = logits.shape[0]
    diag = np.zeros((n, n))
    diag[np.arange(n), np.arange(n)] = 1.0
    return -T.sum(T.log_softmax(logits, axis=1) * diag) * (1.0 / n)


def contrastive_step(encoder: ContrastiveEncoder, image_batch: np.ndarray, rng: np.random.Generator,
                     lr: float, crop: CropSpec | None = None, momentum: bool = True) -> float:
    """One instance-discrimination update of the query encoder (and W), then the key EMA."""
    if len(image_batch) < 2:
        raise ValueError("contrastive_step needs a batch of at least 2 images")
    spec = crop or CropSpec()
    anchors = random_crop_batch(image_batch, spec, rng)
    positives = random_crop_batch(image_batch, spec, rng)
    tape = Tape()
    q = encoder(anchors, tape, True)
    k = Tensor(encoder.encode_key(positives))
    W = tape.param(encoder.bilinear, "W") if encoder.learn_w else Tensor(encoder.bilinear["W"])
    loss = batch_info_nce(q, k, W)
    tape.backward(loss)
    adam_step(encoder.params, lr)
    if encoder.learn_w:
        adam_step(encoder.bilinear, lr)
    if momentum:
        encoder.momentum_update()
    return float(loss.value)


def _stack_frames(front: np.ndarray, wrist: np.ndarray) -> np.ndarray:
    return concat_channels(front, wrist)[None]


def pipeline3_observe(front: np.ndarray, wrist: np.ndarray, joints, raw_cnn: RawCnn) -> np.ndarray:
    feats = raw_cnn(_stack_frames(front, wrist), None, False).value[0]
    return np.concatenate([feats, np.asarray(joints, dtype=np.float64)])


def pipeline4_observe(front: np.ndarray, wrist: np.ndarray, joints, encoder: ContrastiveEncoder) -> np.ndarray:
    feats = encoder(_stack_frames(front, wrist), None, False).value[0]
    return np.concatenate([feats, np.asarray(joints, dtype=np.float64)])


def synthetic_two_class(rng: np.random.Generator, per_class: int, size: int = RESOLUTION) -> tuple[np.ndarray, np.ndarray]:
    """Red-dominant and blue-dominant 6-channel frames with per-frame texture.

    Returns (frames (2*per_class, 6, size, size) in [0, 1], labels 0/1).
    """
    frames, labels = [], []
    for label, channel in ((0, 0), (1, 2)):
        for _ in range(per_class):
            img = np.full((6, size, size), 0.2) + rng.uniform(0, 0.1, (6, size, size))
            img[channel] += 0.5
            img[channel + 3] += 0.5
            top, left = rng.integers(0, size - 16, 2)
            img[:, top:top + 16, left:left + 16] *= 0.5
            frames.append(np.clip(img, 0.0, 1.0))
            labels.append(label)
    return np.array(frames), np.array(labels)
