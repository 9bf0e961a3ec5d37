"""Central finite-difference gradient checking."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor


@dataclass
class GradCheckResult:
    max_rel_error: float
    max_abs_error: float
    passed: bool


def numeric_grad(f: Callable[..., Tensor], inputs: Sequence[np.ndarray], index: int,
                 h: float = 1e-5) -> np.ndarray:
    """d f / d inputs[index] by central differences, evaluating ``f`` without a tape."""
    base = [np.array(x, dtype=np.float64) for x in inputs]
    x = base[index]
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = x[i]
        x[i] = orig + h
        fp = float(f(*[Tensor(v) for v in base]).value)
        x[i] = orig - h
        fm = float(f(*[Tensor(v) for v in base]).value)
        x[i] = orig
        grad[i] = (fp - fm) / (2.0 * h)
    return grad


def analytic_grads(f: Callable[..., Tensor], inputs: Sequence[np.ndarray]) -> list[np.ndarray]:
    tape = Tape()
    leaves = [tape.variable(np.array(x, dtype=np.float64)) for x in inputs]
    out = f(*leaves)
    tape.backward(out)
    return [leaf.grad if leaf.grad is not None else np.zeros(leaf.shape) for leaf in leaves]


def gradcheck(f: Callable[..., Tensor], inputs: Sequence[np.ndarray], h: float = 1e-5,
              rtol: float = 1e-4, atol: float = 1e-8, wrt: Sequence[int] | None = None) -> GradCheckResult:
    """Compare tape gradients with central differences for every input in ``wrt``.

    An element passes when |analytic - numeric| <= max(rtol * max(|analytic|, |numeric|), atol).
    The reported relative error ignores elements already within ``atol``.
    """
    which = range(len(inputs)) if wrt is None else wrt
    grads = analytic_grads(f, inputs)
    worst_rel = worst_abs = 0.0
    passed = True
    for k in which:
        a = grads[k]
        n = numeric_grad(f, inputs, k, h)
        diff = np.abs(a - n)
        scale = np.maximum(np.abs(a), np.abs(n))
        if diff.size:
            worst_abs = max(worst_abs, float(diff.max()))
            relevant = diff > atol
            if relevant.any():
                worst_rel = max(worst_rel, float((diff[relevant] / scale[relevant]).max()))
        passed &= bool(np.all(diff <= np.maximum(rtol * scale, atol)))
    return GradCheckResult(worst_rel, worst_abs, passed)
