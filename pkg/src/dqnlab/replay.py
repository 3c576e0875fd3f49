"""Fixed-capacity FIFO transition store with uniform minibatch sampling.

Storage is a set of parallel preallocated arrays indexed by a ring head, so
the training kernel can gather minibatches without object overhead. The
``done`` flag stored here is the bootstrap flag: timeout terminals are
stored with done = False when the run is configured to bootstrap through
time limits (the default), because the step limit is not part of the
physics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UsageError
from .rng import Prng


@dataclass(frozen=True)
class Transition:
    s: np.ndarray
    a: int
    r: float
    s_next: np.ndarray
    done: bool


class ReplayBuffer:
    """Ring buffer of transitions. When full, each push evicts the oldest."""

    def __init__(self, capacity: int, obs_dim: int):
        if capacity < 1:
            raise UsageError("capacity must be positive")
        self.capacity = capacity
        self.obs_dim = obs_dim
        self.s = np.empty((capacity, obs_dim))
        self.a = np.empty(capacity, dtype=np.int64)
        self.r = np.empty(capacity)
        self.s_next = np.empty((capacity, obs_dim))
        self.done = np.empty(capacity)  # 0.0 / 1.0 for the kernels
        self.insert_count = 0

    def __len__(self) -> int:
        return min(self.insert_count, self.capacity)

    def push(self, t: Transition) -> "ReplayBuffer":
        self.push_parts(t.s, t.a, t.r, t.s_next, t.done)
        return self

    def push_parts(self, s, a, r, s_next, done) -> None:
        i = self.insert_count % self.capacity
        self.s[i] = s
        self.a[i] = a
        self.r[i] = r
        self.s_next[i] = s_next
        self.done[i] = 1.0 if done else 0.0
        self.insert_count += 1

    def get(self, i: int) -> Transition:
        """i-th stored transition in FIFO order (0 = oldest)."""
        n = len(self)
        if not 0 <= i < n:
            raise UsageError(f"index {i} out of range for buffer of {n}")
        if self.insert_count <= self.capacity:
            j = i
        else:
            j = (self.insert_count + i) % self.capacity
        return Transition(self.s[j].copy(), int(self.a[j]), float(self.r[j]),
                          self.s_next[j].copy(), bool(self.done[j] > 0.5))

    def sample(self, batch_size: int, rng: Prng) -> list[Transition]:
        """batch_size transitions drawn uniformly with replacement, in draw
        order. Does not mutate the buffer.

        Draws index storage slots directly (one randint per slot): once the
        ring is full the slots are a fixed permutation of FIFO order, so the
        draw is still uniform over the stored transitions, and the fused
        training kernel consuming the same stream gathers the identical
        batch.

        Sampling with replacement only needs a non-empty buffer; training
        itself starts later (learn_start >= batch_size is enforced on the
        run configuration).
        """
        n = len(self)
        if batch_size < 1:
            raise UsageError("batch_size must be positive")
        if n < 1:
            raise UsageError("cannot sample an empty buffer")
        out = []
        for _ in range(batch_size):
            j = rng.randint(n)
            out.append(Transition(self.s[j].copy(), int(self.a[j]), float(self.r[j]),
                                  self.s_next[j].copy(), bool(self.done[j] > 0.5)))
        return out
