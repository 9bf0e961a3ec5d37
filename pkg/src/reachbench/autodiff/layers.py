"""Dense / conv layers and MLPs whose weights live in a shared NetParams."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from . import tensor as T
from .params import NetParams
from .tensor import Tape, Tensor


def glorot_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int,
                   scale: float = 1.0) -> np.ndarray:
    limit = scale * np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Layer:
    def __init__(self, params: NetParams, name: str):
        self.params = params
        self.name = name

    def _get(self, tape: Tape | None, key: str, trainable: bool) -> Tensor:
        full = f"{self.name}.{key}"
        if tape is None or not trainable:
            return Tensor(self.params[full])
        return tape.param(self.params, full)


class Dense(Layer):
    def __init__(self, params: NetParams, name: str, n_in: int, n_out: int,
                 rng: np.random.Generator, scale: float = 1.0):
        super().__init__(params, name)
        self.n_in, self.n_out = n_in, n_out
        params.add(f"{name}.w", glorot_uniform(rng, (n_in, n_out), n_in, n_out, scale))
        params.add(f"{name}.b", np.zeros(n_out))

    def __call__(self, x, tape: Tape | None = None, trainable: bool = True) -> Tensor:
        w = self._get(tape, "w", trainable)
        b = self._get(tape, "b", trainable)
        return T.matmul(x, w) + b


class Conv2d(Layer):
    def __init__(self, params: NetParams, name: str, c_in: int, c_out: int, kernel: int,
                 stride: int, rng: np.random.Generator):
        super().__init__(params, name)
        self.c_in, self.c_out, self.kernel, self.stride = c_in, c_out, kernel, stride
        field = kernel * kernel
        params.add(f"{name}.w", glorot_uniform(rng, (c_out, c_in, kernel, kernel),
                                               c_in * field, c_out * field))
        params.add(f"{name}.b", np.zeros(c_out))

    def out_size(self, size: int) -> int:
        return (size - self.kernel) // self.stride + 1

    def __call__(self, x, tape: Tape | None = None, trainable: bool = True) -> Tensor:
        w = self._get(tape, "w", trainable)
        b = self._get(tape, "b", trainable)
        return T.conv2d(x, w, b, stride=self.stride)


class MLP:
    """Dense stack with ReLU between layers and a linear output."""

    def __init__(self, params: NetParams, name: str, n_in: int, hidden: Sequence[int], n_out: int,
                 rng: np.random.Generator, out_scale: float = 1.0):
        sizes = [n_in, *hidden, n_out]
        self.layers = [
            Dense(params, f"{name}.l{i}", sizes[i], sizes[i + 1], rng,
                  scale=out_scale if i == len(sizes) - 2 else 1.0)
            for i in range(len(sizes) - 1)
        ]
        self.n_in, self.n_out = n_in, n_out

    def __call__(self, x, tape: Tape | None = None, trainable: bool = True) -> Tensor:
        h = x
        for layer in self.layers[:-1]:
            h = T.relu(layer(h, tape, trainable))
        return self.layers[-1](h, tape, trainable)
