"""Episode-capacity FIFO replay buffer with uniform sampling over stored transitions."""
from __future__ import annotations

from collections import deque

import numpy as np


class EpisodeReplayBuffer:
    """Holds whole episodes of fixed-width transition fields.

    Capacity is counted in episodes; when full, the oldest episode is dropped.
    Transitions live contiguously in growable arrays, so sampling is a single
    fancy-index per field.

    Parameters
    ----------
    fields : dict[str, tuple]
        Field name -> per-transition shape, e.g. ``{"obs": (8,), "reward": ()}``.
    capacity : int
        Maximum number of episodes kept.
    """

    def __init__(self, fields, capacity=100_000):
        self.fields = {k: tuple(v) for k, v in fields.items()}
        self.capacity = int(capacity)
        self._data = {k: np.zeros((1024, *shape)) for k, shape in self.fields.items()}
        self._head = 0
        self._tail = 0
        self._episodes = deque()
        self.episodes_added = 0

    def __len__(self):
        return self._tail - self._head

    @property
    def n_episodes(self):
        return len(self._episodes)

    def _reserve(self, extra):
        size = next(iter(self._data.values())).shape[0]
        live = len(self)
        if self._tail + extra <= size:
            return
        new_size = size
        while live + extra > new_size // 2:
            new_size *= 2
        for k, arr in self._data.items():
            fresh = np.zeros((new_size, *arr.shape[1:]))
            fresh[:live] = arr[self._head:self._tail]
            self._data[k] = fresh
        shift = self._head
        self._episodes = deque((s - shift, n) for s, n in self._episodes)
        self._head, self._tail = 0, live

    def add_episode(self, batch):
        """Append one episode given as ``{field: array of shape (n, *field_shape)}``."""
        n = len(next(iter(batch.values())))
        if n == 0:
            return
        for k in self.fields:
            if len(batch[k]) != n:
                raise ValueError(f"field {k!r} has {len(batch[k])} rows, expected {n}")
        if self.n_episodes >= self.capacity:
            _, old = self._episodes.popleft()
            self._head += old
        self._reserve(n)
        for k in self.fields:
            self._data[k][self._tail:self._tail + n] = batch[k]
        self._episodes.append((self._tail, n))
        self._tail += n
        self.episodes_added += 1

    def sample(self, batch_size, rng):
        """Uniform draw (with replacement) over all stored transitions."""
        if len(self) == 0:
            raise ValueError("cannot sample from an empty buffer")
        idx = self._head + rng.integers(0, len(self), size=batch_size)
        return {k: arr[idx] for k, arr in self._data.items()}

    def all(self):
        return {k: arr[self._head:self._tail].copy() for k, arr in self._data.items()}

    def episode(self, i):
        start, n = self._episodes[i]
        return {k: arr[start:start + n].copy() for k, arr in self._data.items()}
