"""Replay memory with a protected demonstration partition."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..env import Transition


@dataclass
class Batch:
    obs: dict[str, np.ndarray]
    actions: np.ndarray
    rewards: np.ndarray
    next_obs: dict[str, np.ndarray]
    dones: np.ndarray
    is_demo: np.ndarray

    def __len__(self) -> int:
        return len(self.rewards)


class ReplayBuffer:
    """Slots ``[0, demo_count)`` hold demonstrations pushed during the preload phase and are
    never evicted; the remaining ``capacity - demo_count`` slots form a FIFO ring.

    The preload phase ends explicitly via :meth:`end_preload` or implicitly at the
    first non-demo push.  Later demo-flagged pushes go to the ring like any other item.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.demo_count = 0
        self.preloading = True
        self._ring_size = 0
        self._ring_next = 0
        self._obs: dict[str, np.ndarray] | None = None
        self._next_obs: dict[str, np.ndarray] | None = None
        self._actions = np.zeros((self.capacity, 6))
        self._rewards = np.zeros(self.capacity)
        self._dones = np.zeros(self.capacity)
        self._is_demo = np.zeros(self.capacity, dtype=bool)

    def __len__(self) -> int:
        return self.demo_count + self._ring_size

    @property
    def ring_capacity(self) -> int:
        return self.capacity - self.demo_count

    def _allocate(self, obs: dict[str, np.ndarray]) -> None:
        def alloc():
            return {k: np.zeros((self.capacity, *np.shape(v)), dtype=np.asarray(v).dtype)
                    for k, v in obs.items()}
        self._obs, self._next_obs = alloc(), alloc()

    def end_preload(self) -> None:
        self.preloading = False

    def push(self, t: Transition) -> None:
        action = np.asarray(t.action, dtype=np.float64)
        if action.shape != (6,) or np.any(np.abs(action) > 1.0):
            raise ValueError(f"action must have 6 components in [-1, 1], got {action}")
        if set(t.obs) != set(t.next_obs) or any(np.shape(t.obs[k]) != np.shape(t.next_obs[k]) for k in t.obs):
            raise ValueError("obs and next_obs layouts differ")
        if self._obs is None:
            self._allocate(t.obs)
        elif set(t.obs) != set(self._obs):
            raise ValueError(f"observation keys {sorted(t.obs)} do not match {sorted(self._obs)}")

        if t.is_demo and self.preloading:
            if self.demo_count >= self.capacity:
                raise ValueError("demonstrations exceed replay capacity")
            slot = self.demo_count
            self.demo_count += 1
        else:
            self.preloading = False
            if self.ring_capacity == 0:
                raise ValueError("no room left for non-demo transitions")
            slot = self.demo_count + self._ring_next
            self._ring_next = (self._ring_next + 1) % self.ring_capacity
            self._ring_size = min(self._ring_size + 1, self.ring_capacity)

        for k, v in t.obs.items():
            self._obs[k][slot] = v
            self._next_obs[k][slot] = t.next_obs[k]
        self._actions[slot] = action
        self._rewards[slot] = t.reward
        self._dones[slot] = float(t.done)
        self._is_demo[slot] = t.is_demo

    def extend(self, transitions) -> None:
        for t in transitions:
            self.push(t)

    def gather(self, idx: np.ndarray) -> Batch:
        return Batch(
            obs={k: v[idx] for k, v in self._obs.items()},
            actions=self._actions[idx],
            rewards=self._rewards[idx],
            next_obs={k: v[idx] for k, v in self._next_obs.items()},
            dones=self._dones[idx],
            is_demo=self._is_demo[idx],
        )

    def sample(self, n: int, rng: np.random.Generator) -> Batch:
        """Uniform with replacement over every stored item, demos included."""
        if len(self) < n or len(self) == 0:
            raise ValueError(f"cannot sample {n} transitions from a buffer holding {len(self)}")
        return self.gather(rng.integers(0, len(self), size=n))

    def demo_indices(self) -> np.ndarray:
        return np.arange(self.demo_count)
