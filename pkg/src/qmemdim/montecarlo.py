"""Seeded trajectory simulator of the distill/consume/refill round protocol.

Randomness comes from numpy's counter-based Philox4x32-10 generator. Each
round draws exactly ``d`` uniforms (one per distillation level, in level
order) and binomial counts are obtained by inversion of a precomputed CDF,
so a trajectory depends only on the seed.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass

import numpy as np

from .distillation import DistillationLadder
from .errors import DomainError
from .markov import CYCLE_START, MEASUREMENT_POINTS, PARTIAL, PRE_CONSUMPTION, RoundPolicy, binomial_pmf
from .statespace import MemoryConfig, StateSpace, enumerate_states

PRNG_NAME = "Philox4x32-10 (numpy.random.Philox)"
_BLOCK = 65536
N_BATCHES = 50


@dataclass(frozen=True)
class SimConfig:
    memory: MemoryConfig
    ladder: DistillationLadder
    policy: RoundPolicy
    rounds: int
    burn_in: int = 1000
    seed: int = 0
    measure: str = CYCLE_START
    check_states: bool = False

    def __post_init__(self):
        if self.ladder.max_steps != self.memory.max_steps:
            raise DomainError("ladder depth does not match memory max_steps")
        if self.rounds < 1 or not (0 <= self.burn_in < self.rounds):
            raise DomainError(f"need 0 <= burn_in < rounds, got {self.burn_in}, {self.rounds}")
        if not (0 <= self.seed < 2**64):
            raise DomainError("seed must be a 64-bit unsigned integer")
        if self.measure not in MEASUREMENT_POINTS:
            raise DomainError(f"unknown measurement point {self.measure!r}")


@dataclass(frozen=True)
class SimResult:
    empirical_occupancy: np.ndarray
    empirical_outage: float
    outage_events: int
    rounds_counted: int
    batch_stderr: float = math.nan

    @property
    def outage_stderr(self) -> float:
        """Binomial standard error, ignoring autocorrelation."""
        p = self.empirical_outage
        return math.sqrt(p * (1.0 - p) / self.rounds_counted)


def _batch_stderr(indicators: bytearray, n_batches: int = N_BATCHES) -> float:
    """Standard error of the mean from non-overlapping batch means."""
    x = np.frombuffer(bytes(indicators), dtype=np.uint8).astype(float)
    size = x.size // n_batches
    if size == 0:
        return math.nan
    means = x[: size * n_batches].reshape(n_batches, size).mean(axis=1)
    return float(means.std(ddof=1) / math.sqrt(n_batches))


def _cdf_tables(m: int, probs) -> list[list[list[float]]]:
    tables = []
    for p in probs:
        per_n = []
        for n in range(m // 2 + 1):
            cdf = np.cumsum(binomial_pmf(n, p)).tolist()
            cdf[-1] = 1.0
            per_n.append(cdf)
        tables.append(per_n)
    return tables


def simulate(config: SimConfig, space: StateSpace | None = None) -> SimResult:
    """Run one trajectory from state zero.

    Rounds are grouped into cycles of ``W`` waiting rounds followed by one
    consumption round (``W = 0`` means every round consumes). After burn-in,
    the occupancy histogram and the outage test are both sampled once per
    cycle: the histogram at the cycle start, the outage test at
    ``config.measure``.
    """
    m = config.memory.memory_size
    d = config.memory.max_steps
    c = config.policy.consumption
    partial = config.policy.consumption_rule == PARTIAL
    period = config.policy.bootstrap_wait + 1
    space = space or enumerate_states(config.memory)
    tables = _cdf_tables(m, config.ladder.success_probs)
    rng = np.random.Generator(np.random.Philox(config.seed))

    state = [m] + [0] * d
    visits: dict[tuple[int, ...], int] = {}
    outcomes = bytearray()
    block = np.empty((0, d))
    pos = 0
    for t in range(config.rounds):
        phase = t % period
        sampled = t >= config.burn_in
        if sampled and phase == 0:
            key = tuple(state)
            visits[key] = visits.get(key, 0) + 1
            if config.measure == CYCLE_START:
                outcomes.append(state[d] < c)
        consuming = phase == period - 1
        if sampled and consuming and config.measure == PRE_CONSUMPTION:
            outcomes.append(state[d] < c)
        if d == 0:
            continue
        if pos == block.shape[0]:
            block = rng.random((min(_BLOCK, config.rounds - t), d))
            pos = 0
        u = block[pos]
        pos += 1
        new = [0] * (d + 1)
        for i in range(d):
            trials = state[i] >> 1
            k = bisect_right(tables[i][trials], u[i])
            new[i + 1] = k if k < trials else trials
        for i in range(1, d):
            new[i] += state[i] & 1
        top = new[d] + state[d]
        if consuming:
            if top >= c:
                top -= c
            elif partial:
                top = 0
        new[d] = top
        new[0] = m - sum(new[1:])
        if config.check_states:
            assert new[0] >= 0 and sum(new) == m, (state, new)
        state = new

    occupancy = np.zeros(len(space))
    for key in sorted(visits):
        occupancy[space.rank(key)] = visits[key]
    occupancy /= occupancy.sum()
    events = sum(outcomes)
    counted = len(outcomes)
    return SimResult(
        occupancy, events / counted if counted else 0.0, events, counted, _batch_stderr(outcomes)
    )


def simulate_replications(config: SimConfig, n: int, space: StateSpace | None = None) -> SimResult:
    """Merge `n` independent trajectories with seeds spawned from ``config.seed``.

    Merging is in ascending replication order, so the result does not depend
    on how the replications were scheduled.
    """
    space = space or enumerate_states(config.memory)
    children = np.random.SeedSequence(config.seed).spawn(n)
    occupancy = np.zeros(len(space))
    events = 0
    counted = 0
    batch_var = 0.0
    for child in children:
        seed = int(child.generate_state(1, dtype=np.uint64)[0])
        res = simulate(
            SimConfig(
                config.memory, config.ladder, config.policy, config.rounds,
                config.burn_in, seed, config.measure, config.check_states,
            ),
            space,
        )
        occupancy += res.empirical_occupancy * res.rounds_counted
        events += res.outage_events
        counted += res.rounds_counted
        batch_var += (res.batch_stderr * res.rounds_counted) ** 2
    return SimResult(
        occupancy / occupancy.sum(), events / counted, events, counted, math.sqrt(batch_var) / counted
    )


def empirical_nd_marginal(result: SimResult, space: StateSpace) -> np.ndarray:
    return np.bincount(
        space.states[:, space.d], weights=result.empirical_occupancy, minlength=space.M + 1
    )
