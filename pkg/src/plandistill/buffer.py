"""Ring-buffer replay store for transitions."""

from __future__ import annotations

import numpy as np

from .mdp import Transition


class TransitionBuffer:
    """Fixed-capacity FIFO store of (s, a, r, s', terminal) records.

    Storage arrays are allocated lazily from the first record's shapes, so
    the same class holds integer tabular transitions and float vectors.
    Batch sampling is uniform without replacement within a batch.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = int(capacity)
        self.insertions = 0
        self._states = None
        self._actions = None
        self._rewards = np.zeros(capacity)
        self._next_states = None
        self._terminals = np.zeros(capacity, dtype=bool)

    def __len__(self) -> int:
        return min(self.insertions, self.capacity)

    def _allocate(self, transition: Transition) -> None:
        def storage_for(value):
            arr = np.asarray(value)
            if arr.ndim == 0:
                return np.zeros(self.capacity, dtype=arr.dtype)
            return np.zeros((self.capacity, *arr.shape), dtype=np.float64)

        self._states = storage_for(transition.state)
        self._actions = storage_for(transition.action)
        self._next_states = storage_for(transition.next_state)

    def add(self, transition: Transition) -> None:
        if self._states is None:
            self._allocate(transition)
        slot = self.insertions % self.capacity
        self._states[slot] = transition.state
        self._actions[slot] = transition.action
        self._rewards[slot] = transition.reward
        self._next_states[slot] = transition.next_state
        self._terminals[slot] = transition.terminal
        self.insertions += 1

    def _view(self, idx: np.ndarray) -> dict:
        return {
            "states": self._states[idx],
            "actions": self._actions[idx],
            "rewards": self._rewards[idx],
            "next_states": self._next_states[idx],
            "terminals": self._terminals[idx],
        }

    def sample_batch(self, batch_size: int, rng: np.random.Generator) -> dict:
        n = len(self)
        if n == 0:
            raise ValueError("cannot sample from an empty buffer")
        if batch_size > n:
            raise ValueError(f"batch_size {batch_size} exceeds buffer size {n}")
        idx = rng.choice(n, size=batch_size, replace=False)
        return self._view(idx)

    def bootstrap_indices(self, rng: np.random.Generator) -> np.ndarray:
        """A with-replacement resample of the whole buffer (for one ensemble member)."""
        n = len(self)
        if n == 0:
            raise ValueError("cannot resample an empty buffer")
        return rng.integers(0, n, size=n)

    def all(self) -> dict:
        n = len(self)
        if n == 0:
            raise ValueError("buffer is empty")
        return self._view(np.arange(n))

    def recent(self, n: int) -> dict:
        """The most recently inserted min(n, len) records, oldest first."""
        count = min(n, len(self))
        if count == 0:
            raise ValueError("buffer is empty")
        newest = (self.insertions - 1) % self.capacity
        idx = (np.arange(newest - count + 1, newest + 1)) % self.capacity
        return self._view(idx)
