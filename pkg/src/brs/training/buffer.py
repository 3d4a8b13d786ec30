"""FIFO replay buffer of past agent parameter vectors."""

from __future__ import annotations

from collections import deque

import numpy as np

from ..errors import ConfigError
from ..params import ParameterVector, add_gaussian_noise


class ReplayBuffer:
    """Bounded FIFO; sampling is uniform with replacement plus Gaussian noise.

    Stored entries are never mutated: sampling returns freshly perturbed
    copies and `push` keeps the vector as given (ParameterVector is immutable
    by convention).
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ConfigError("replay buffer capacity must be >= 1")
        self.capacity = capacity
        self._entries: deque[ParameterVector] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self._entries)

    def push(self, params: ParameterVector) -> None:
        self._entries.append(params)

    def sample(self, batch: int, sigma: float,
               rng: np.random.Generator) -> list[ParameterVector]:
        if not self._entries:
            raise ConfigError("cannot sample from an empty replay buffer")
        indices = rng.integers(0, len(self._entries), size=batch)
        return [add_gaussian_noise(self._entries[i], sigma, rng) for i in indices]
