"""Enumeration and ranking of memory occupancy vectors.

A state is a composition ``(n_0, ..., n_d)`` of the memory size ``M`` into
``d + 1`` nonnegative parts. States are ordered lexicographically with
``n_0`` descending first, so state zero ``(M, 0, ..., 0)`` always has rank 0
and the rank of any state is computable from the combinatorial number system
without a lookup table.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityError, DomainError

DEFAULT_MAX_STATES = 5_000_000


@dataclass(frozen=True)
class MemoryConfig:
    memory_size: int
    max_steps: int

    def __post_init__(self):
        if int(self.memory_size) != self.memory_size or self.memory_size < 1:
            raise DomainError(f"memory_size must be a positive integer, got {self.memory_size!r}")
        if int(self.max_steps) != self.max_steps or self.max_steps < 0:
            raise DomainError(f"max_steps must be a nonnegative integer, got {self.max_steps!r}")

    @property
    def n_states(self) -> int:
        return math.comb(self.memory_size + self.max_steps, self.max_steps)


def _compositions(total: int, parts: int):
    if parts == 1:
        yield (total,)
        return
    for head in range(total, -1, -1):
        for tail in _compositions(total - head, parts - 1):
            yield (head,) + tail


@dataclass(frozen=True, eq=False)
class StateSpace:
    """Immutable, eagerly enumerated state space.

    Attributes
    ----------
    config : MemoryConfig
    states : ndarray of int64, shape (n_states, d + 1)
        Row ``k`` is the state of rank ``k``. Read-only.
    """

    config: MemoryConfig
    states: np.ndarray = field(repr=False)
    _comb: np.ndarray = field(repr=False)

    @property
    def M(self) -> int:
        return self.config.memory_size

    @property
    def d(self) -> int:
        return self.config.max_steps

    def __len__(self) -> int:
        return self.states.shape[0]

    def rank(self, state) -> int:
        counts = [int(x) for x in state]
        if len(counts) != self.d + 1 or any(x < 0 for x in counts) or sum(counts) != self.M:
            raise DomainError(
                f"{tuple(counts)} is not a composition of M={self.M} into {self.d + 1} parts"
            )
        r = 0
        remaining = self.M
        for i in range(self.d):
            k = self.d - i
            r += math.comb(remaining - counts[i] - 1 + k, k)
            remaining -= counts[i]
        return r

    def rank_many(self, counts: np.ndarray) -> np.ndarray:
        """Vectorised rank of an ``(n, d + 1)`` integer array; inputs are assumed valid."""
        counts = np.asarray(counts, dtype=np.int64)
        r = np.zeros(counts.shape[0], dtype=np.int64)
        remaining = np.full(counts.shape[0], self.M, dtype=np.int64)
        for i in range(self.d):
            k = self.d - i
            r += self._comb[remaining - counts[:, i] - 1 + k, k]
            remaining -= counts[:, i]
        return r

    def unrank(self, index: int) -> tuple[int, ...]:
        if not (0 <= index < len(self)):
            raise DomainError(f"index {index} outside [0, {len(self)})")
        return tuple(int(x) for x in self.states[index])


def enumerate_states(config: MemoryConfig, max_states: int = DEFAULT_MAX_STATES) -> StateSpace:
    n = config.n_states
    if n > max_states:
        raise CapacityError(
            f"state space for M={config.memory_size}, d={config.max_steps} has {n} states "
            f"(budget {max_states})",
            count=n,
        )
    parts = config.max_steps + 1
    states = np.fromiter(
        (x for s in _compositions(config.memory_size, parts) for x in s),
        dtype=np.int64,
        count=n * parts,
    ).reshape(n, parts)
    states.setflags(write=False)
    top = config.memory_size + config.max_steps + 1
    comb = np.array(
        [[math.comb(x, k) for k in range(config.max_steps + 1)] for x in range(top)],
        dtype=np.int64,
    )
    comb.setflags(write=False)
    return StateSpace(config, states, comb)


def zero_state_index(space: StateSpace) -> int:
    """Rank of ``(M, 0, ..., 0)``, the all-raw state."""
    return space.rank((space.M,) + (0,) * space.d)
