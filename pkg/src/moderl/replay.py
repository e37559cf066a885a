"""Fixed-capacity FIFO experience buffer with uniform sampling (with replacement)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Transition:
    """One experience tuple.  ``terminal`` marks a true terminal state; episode
    ends caused by a time limit are stored with terminal=False so bootstrap
    continues through them."""

    s: np.ndarray
    a: np.ndarray
    r: float
    s_next: np.ndarray
    terminal: bool


@dataclass
class Batch:
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    terminal: np.ndarray  # float mask, 1.0 at true terminals

    def __len__(self):
        return self.s.shape[0]


class ReplayBuffer:
    """Ring buffer over preallocated arrays; oldest entries are overwritten
    once capacity is reached."""

    def __init__(self, capacity, state_dim, action_dim, seed, dtype=np.float32):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.dtype = np.dtype(dtype)
        self._s = np.zeros((capacity, state_dim), dtype=dtype)
        self._a = np.zeros((capacity, action_dim), dtype=dtype)
        self._r = np.zeros(capacity, dtype=dtype)
        self._s_next = np.zeros((capacity, state_dim), dtype=dtype)
        self._terminal = np.zeros(capacity, dtype=dtype)
        self._size = 0
        self._head = 0
        self.rng = np.random.default_rng(seed)

    def __len__(self):
        return self._size

    def push(self, t: Transition):
        i = self._head
        self._s[i] = t.s
        self._a[i] = t.a
        self._r[i] = t.r
        self._s_next[i] = t.s_next
        self._terminal[i] = 1.0 if t.terminal else 0.0
        self._head = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, n, rng=None):
        """n independent uniform draws with replacement from the stored entries."""
        if n > self._size:
            raise ValueError(f"cannot sample {n} from buffer of size {self._size}")
        if rng is None:
            rng = self.rng
        idx = rng.integers(0, self._size, size=n)
        return Batch(
            s=self._s[idx].copy(),
            a=self._a[idx].copy(),
            r=self._r[idx].copy(),
            s_next=self._s_next[idx].copy(),
            terminal=self._terminal[idx].copy(),
        )
