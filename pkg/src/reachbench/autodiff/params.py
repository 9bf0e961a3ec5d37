"""Named parameter store, Adam, and the binary checkpoint layout."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

CHECKPOINT_MAGIC = b"REACHBENCH-CKPT-v1\n"


@dataclass
class ParamEntry:
    name: str
    value: np.ndarray
    grad: np.ndarray = field(init=False)
    m: np.ndarray = field(init=False)
    v: np.ndarray = field(init=False)
    step: int = 0

    def __post_init__(self):
        self.value = np.ascontiguousarray(self.value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.m = np.zeros_like(self.value)
        self.v = np.zeros_like(self.value)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape


class NetParams:
    """Ordered collection of named parameters with gradients and Adam moments."""

    def __init__(self):
        self._entries: dict[str, ParamEntry] = {}

    def add(self, name: str, value) -> ParamEntry:
        if name in self._entries:
            raise ValueError(f"duplicate parameter name {name!r}")
        entry = ParamEntry(name, np.array(value, dtype=np.float64))
        self._entries[name] = entry
        return entry

    def entry(self, name: str) -> ParamEntry:
        try:
            return self._entries[name]
        except KeyError:
            raise KeyError(f"unknown parameter {name!r}") from None

    def __getitem__(self, name: str) -> np.ndarray:
        return self.entry(name).value

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __iter__(self) -> Iterator[ParamEntry]:
        return iter(self._entries.values())

    def __len__(self) -> int:
        return len(self._entries)

    def names(self) -> list[str]:
        return list(self._entries)

    def zero_grad(self) -> None:
        for e in self._entries.values():
            e.grad.fill(0.0)

    def copy(self) -> "NetParams":
        """Deep copy of values only (fresh gradients and optimizer state)."""
        out = NetParams()
        for e in self._entries.values():
            out.add(e.name, e.value.copy())
        return out

    def values(self) -> dict[str, np.ndarray]:
        return {e.name: e.value for e in self._entries.values()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        for name, v in values.items():
            e = self.entry(name)
            if v.shape != e.value.shape:
                raise ValueError(f"{name}: shape {v.shape} does not match {e.value.shape}")
            e.value[...] = v

    def num_values(self) -> int:
        return sum(e.value.size for e in self._entries.values())


def _check_matching(target: NetParams, source: NetParams) -> None:
    if target.names() != source.names():
        raise ValueError("parameter sets have different names")
    for t, s in zip(target, source):
        if t.shape != s.shape:
            raise ValueError(f"{t.name}: shape {t.shape} does not match {s.shape}")


def blend_into(target: NetParams, source: NetParams, keep: float) -> None:
    """target <- keep * target + (1 - keep) * source, elementwise and in place."""
    _check_matching(target, source)
    for t, s in zip(target, source):
        t.value *= keep
        t.value += (1.0 - keep) * s.value


def adam_step(params: NetParams, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """One bias-corrected Adam update of every entry, then zero the gradients."""
    for e in params:
        if not np.all(np.isfinite(e.grad)):
            raise FloatingPointError(f"non-finite gradient in parameter {e.name!r}")
    for e in params:
        e.step += 1
        e.m *= beta1
        e.m += (1.0 - beta1) * e.grad
        e.v *= beta2
        e.v += (1.0 - beta2) * (e.grad * e.grad)
        m_hat = e.m / (1.0 - beta1 ** e.step)
        v_hat = e.v / (1.0 - beta2 ** e.step)
        e.value -= lr * m_hat / (np.sqrt(v_hat) + eps)
        e.grad.fill(0.0)


class Adam:
    def __init__(self, params: NetParams, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps

    def step(self) -> None:
        adam_step(self.params, self.lr, self.beta1, self.beta2, self.eps)


# -- checkpoints -------------------------------------------------------------
#
# header | u32 count | per entry: u32 name_len, name (utf-8), u32 rank,
# rank x u64 extents, row-major float64 little-endian values

def dump_params(values: dict[str, np.ndarray]) -> bytes:
    chunks = [CHECKPOINT_MAGIC, struct.pack("<I", len(values))]
    for name, v in values.items():
        raw = name.encode("utf-8")
        v = np.asarray(v, dtype=np.float64)
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", v.ndim))
        chunks.append(struct.pack(f"<{v.ndim}Q", *v.shape))
        chunks.append(np.ascontiguousarray(v).astype("<f8").tobytes())
    return b"".join(chunks)


def parse_params(blob: bytes) -> dict[str, np.ndarray]:
    if not blob.startswith(CHECKPOINT_MAGIC):
        raise ValueError("not a reachbench checkpoint (bad header)")
    pos = len(CHECKPOINT_MAGIC)

    def take(fmt: str):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(blob):
            raise ValueError("truncated checkpoint")
        out = struct.unpack_from(fmt, blob, pos)
        pos += size
        return out

    (count,) = take("<I")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = take("<I")
        name = blob[pos:pos + name_len].decode("utf-8")
        pos += name_len
        (rank,) = take("<I")
        shape = take(f"<{rank}Q")
        n = int(np.prod(shape, dtype=np.int64))
        if pos + 8 * n > len(blob):
            raise ValueError("truncated checkpoint")
        out[name] = np.frombuffer(blob, dtype="<f8", count=n, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * n
    if pos != len(blob):
        raise ValueError("trailing bytes after checkpoint entries")
    return out


def save_checkpoint(params: NetParams | dict[str, np.ndarray], path: str | Path) -> None:
    values = params.values() if isinstance(params, NetParams) else params
    Path(path).write_bytes(dump_params(values))


def load_checkpoint(path: str | Path, into: NetParams | None = None) -> dict[str, np.ndarray]:
    values = parse_params(Path(path).read_bytes())
    if into is not None:
        into.load_values(values)
    return values
