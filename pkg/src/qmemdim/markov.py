"""Round-transition Markov chain of memory occupancy.

One round is distill -> consume -> refill. From state ``(n_0, ..., n_d)``
level ``i < d`` attempts ``floor(n_i / 2)`` distillations, each succeeding
independently with ``p[i]``; the number of new pairs at level ``i + 1`` is
binomial. Unpaired leftovers stay put, up to ``c`` pairs are consumed from
the top level, and level 0 is refilled so the memory holds ``M`` pairs.

Chains expose ``step(v) -> v @ P`` on row vectors so the bootstrap cycle
``P0^W Pc`` can be applied without forming the product.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .distillation import DistillationLadder
from .errors import CapacityError, ConvergenceError, DomainError
from .statespace import StateSpace, zero_state_index

DEFAULT_TOL = 1e-12
DEFAULT_MAX_ITERS = 1_000_000
DEFAULT_MAX_NNZ = 100_000_000
DIRECT_SOLVE_LIMIT = 2000

PARTIAL = "partial"
ALL_OR_NOTHING = "all_or_nothing"
CONSUMPTION_RULES = (PARTIAL, ALL_OR_NOTHING)

PRE_CONSUMPTION = "pre_consumption"
CYCLE_START = "cycle_start"
MEASUREMENT_POINTS = (PRE_CONSUMPTION, CYCLE_START)


def success_probs(ladder) -> tuple[float, ...]:
    """Per-level success probabilities from a ladder or a plain sequence."""
    if isinstance(ladder, DistillationLadder):
        return ladder.success_probs
    probs = tuple(float(p) for p in ladder)
    for p in probs:
        if not (0.0 <= p <= 1.0):
            raise DomainError(f"success probability {p!r} outside [0, 1]")
    return probs


def _check_rule(rule: str) -> None:
    if rule not in CONSUMPTION_RULES:
        raise DomainError(f"unknown consumption rule {rule!r}; expected one of {CONSUMPTION_RULES}")


def consume(top: int, c: int, rule: str = PARTIAL) -> int:
    """Top-level count left after a consumption request for `c` pairs.

    ``"partial"`` takes whatever is there, ``max(top - c, 0)``.
    ``"all_or_nothing"`` consumes only when at least `c` pairs are stored.
    """
    if top >= c:
        return top - c
    return 0 if rule == PARTIAL else top


@dataclass(frozen=True)
class RoundPolicy:
    consumption: int
    bootstrap_wait: int = 0
    consumption_rule: str = PARTIAL

    def __post_init__(self):
        if self.consumption < 0 or self.bootstrap_wait < 0:
            raise DomainError("consumption and bootstrap_wait must be nonnegative")
        _check_rule(self.consumption_rule)

    def ergodicity_issues(self, ladder, memory_size: int | None = None) -> list[str]:
        issues = []
        d = len(success_probs(ladder))
        if memory_size is not None and d >= 2 and memory_size <= d:
            # e.g. (1, 1, 1, 0): no level holds two pairs and nothing reaches the top
            issues.append(f"M = {memory_size} <= d = {d}: single leftover pairs can strand the memory")
        if self.consumption == 0:
            issues.append("c = 0: state zero is not guaranteed to be reachable")
        if any(p >= 1.0 for p in success_probs(ladder)):
            issues.append("a distillation step has success probability 1")
        if self.consumption_rule == ALL_OR_NOTHING and self.consumption > 1:
            issues.append("all-or-nothing consumption can strand fewer than c top-level pairs")
        return issues

    def check_ergodicity(self, ladder, memory_size: int | None = None) -> bool:
        """Warn (never raise) when the convergence guarantee does not apply."""
        issues = self.ergodicity_issues(ladder, memory_size)
        for msg in issues:
            warnings.warn(f"ergodicity not guaranteed: {msg}", RuntimeWarning, stacklevel=2)
        return not issues


def binomial_pmf(n: int, p: float) -> np.ndarray:
    """``B(n, k, p)`` for ``k = 0..n``; coefficients via the multiplicative recurrence."""
    k = np.arange(n + 1)
    coef = np.ones(n + 1)
    for j in range(1, n + 1):
        coef[j] = coef[j - 1] * (n - j + 1) / j
    return coef * np.power(p, k) * np.power(1.0 - p, n - k)


def outcome_probability(state: Sequence[int], outcome: Sequence[int], ladder) -> float:
    """Probability of observing ``outcome = (new_1, ..., new_d)`` distilled pairs from `state`."""
    probs = success_probs(ladder)
    d = len(state) - 1
    if len(outcome) != d or len(probs) < d:
        raise DomainError(f"outcome length {len(outcome)} does not match d={d}")
    result = 1.0
    for i in range(d):
        trials = state[i] // 2
        k = outcome[i]
        if not (0 <= k <= trials):
            raise DomainError(f"outcome {k} at level {i + 1} outside [0, {trials}]")
        result *= math.comb(trials, k) * probs[i] ** k * (1.0 - probs[i]) ** (trials - k)
    return result


def apply_round(
    state: Sequence[int], outcome: Sequence[int], c: int, rule: str = PARTIAL
) -> tuple[int, ...]:
    """Distil per `outcome`, consume `c` top-level pairs per `rule`, refill level 0."""
    d = len(state) - 1
    m = sum(state)
    if d == 0:
        return (m,)
    new = [0] * (d + 1)
    for i in range(1, d):
        new[i] = outcome[i - 1] + state[i] % 2
    new[d] = consume(outcome[d - 1] + state[d], c, rule)
    new[0] = m - sum(new[1:])
    assert new[0] >= 0, (state, outcome, c)
    return tuple(new)


@dataclass(frozen=True, eq=False)
class TransitionMatrix:
    """Sparse row-stochastic matrix over a state space, built for consumption `c`."""

    matrix: sp.csr_matrix
    consumption: int
    _transposed: sp.csr_matrix = field(repr=False)

    @classmethod
    def from_csr(cls, matrix: sp.csr_matrix, consumption: int) -> "TransitionMatrix":
        matrix = sp.csr_matrix(matrix)
        return cls(matrix, consumption, matrix.T.tocsr())

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    @property
    def nnz(self) -> int:
        return self.matrix.nnz

    def row_sums(self) -> np.ndarray:
        return np.asarray(self.matrix.sum(axis=1)).ravel()

    def step(self, v: np.ndarray) -> np.ndarray:
        return self._transposed @ v

    def pre_consumption(self, v: np.ndarray) -> np.ndarray:
        return v

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()


def _row(counts: np.ndarray, m: int, probs: Sequence[float], c: int, rule: str, space: StateSpace):
    """Target ranks and probabilities reachable from one source state, aggregated."""
    d = len(counts) - 1
    if d == 0:
        return np.zeros(1, dtype=np.int64), np.ones(1)
    pmfs = []
    coords = []
    for i in range(d):
        trials = int(counts[i]) // 2
        pmfs.append(binomial_pmf(trials, probs[i]))
        new = np.arange(trials + 1)
        if i + 1 < d:
            coords.append(new + int(counts[i + 1]) % 2)
        else:
            top = new + int(counts[d])
            keep = 0 if rule == PARTIAL else top
            coords.append(np.where(top >= c, top - c, keep))
    # outcomes enumerated in ascending lexicographic order
    prob = pmfs[0]
    for pmf in pmfs[1:]:
        prob = np.multiply.outer(prob, pmf)
    prob = prob.ravel()
    grids = np.meshgrid(*coords, indexing="ij")
    targets = np.empty((prob.size, d + 1), dtype=np.int64)
    for i, g in enumerate(grids):
        targets[:, i + 1] = g.ravel()
    targets[:, 0] = m - targets[:, 1:].sum(axis=1)
    ranks = space.rank_many(targets)
    cols, inverse = np.unique(ranks, return_inverse=True)
    vals = np.bincount(inverse, weights=prob, minlength=cols.size)
    return cols, vals


def outcome_count(space: StateSpace) -> int:
    """Number of (source, outcome) pairs; an upper bound on the matrix nonzeros."""
    if space.d == 0:
        return len(space)
    halves = space.states[:, :-1] // 2 + 1
    return int(np.prod(halves, axis=1, dtype=np.int64).sum())


def build_transition_matrix(
    space: StateSpace, ladder, c: int, rule: str = PARTIAL, max_nnz: int = DEFAULT_MAX_NNZ
) -> TransitionMatrix:
    """One-round transition matrix for consumption `c`.

    Outcomes that land on the same target state have their probabilities
    summed into a single entry.
    """
    probs = success_probs(ladder)
    if len(probs) != space.d:
        raise DomainError(f"ladder has {len(probs)} steps, state space has d={space.d}")
    if c < 0:
        raise DomainError(f"consumption must be nonnegative, got {c}")
    _check_rule(rule)
    bound = outcome_count(space)
    if bound > max_nnz:
        raise CapacityError(f"transition matrix needs up to {bound} entries (budget {max_nnz})", bound)
    n = len(space)
    indptr = np.zeros(n + 1, dtype=np.int64)
    all_cols = []
    all_vals = []
    for r in range(n):
        cols, vals = _row(space.states[r], space.M, probs, c, rule, space)
        all_cols.append(cols)
        all_vals.append(vals)
        indptr[r + 1] = indptr[r] + cols.size
    matrix = sp.csr_matrix(
        (np.concatenate(all_vals), np.concatenate(all_cols), indptr), shape=(n, n)
    )
    return TransitionMatrix.from_csr(matrix, c)


@dataclass(frozen=True, eq=False)
class BootstrapChain:
    """Cycle of `wait` consumption-free rounds followed by one consumption round.

    The cycle operator ``P0^wait @ Pc`` is never materialised.
    """

    p0: TransitionMatrix
    pc: TransitionMatrix
    wait: int

    @property
    def dimension(self) -> int:
        return self.pc.dimension

    def pre_consumption(self, v: np.ndarray) -> np.ndarray:
        for _ in range(self.wait):
            v = self.p0.step(v)
        return v

    def step(self, v: np.ndarray) -> np.ndarray:
        return self.pc.step(self.pre_consumption(v))

    def dense(self) -> np.ndarray:
        return np.linalg.matrix_power(self.p0.dense(), self.wait) @ self.pc.dense()


def compose_bootstrap(p0: TransitionMatrix, pc: TransitionMatrix, w: int) -> BootstrapChain:
    if p0.dimension != pc.dimension:
        raise DomainError(f"dimension mismatch: {p0.dimension} vs {pc.dimension}")
    if w < 0:
        raise DomainError(f"bootstrap wait must be nonnegative, got {w}")
    if p0.consumption != 0:
        warnings.warn("bootstrap waiting matrix was built with c != 0", RuntimeWarning, stacklevel=2)
    return BootstrapChain(p0, pc, w)


@dataclass(frozen=True)
class Distribution:
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-10:
            raise DomainError("not a probability vector")
        object.__setattr__(self, "probs", p)

    @classmethod
    def point_mass(cls, n: int, index: int = 0) -> "Distribution":
        p = np.zeros(n)
        p[index] = 1.0
        return cls(p)

    @classmethod
    def uniform(cls, n: int) -> "Distribution":
        return cls(np.full(n, 1.0 / n))

    def __len__(self) -> int:
        return self.probs.size


@dataclass(frozen=True)
class SolverInfo:
    iterations: int
    residual: float
    method: str = "power"


def stationary(
    chain,
    start: Distribution | None = None,
    tol: float = DEFAULT_TOL,
    max_iters: int = DEFAULT_MAX_ITERS,
) -> tuple[Distribution, SolverInfo]:
    """Power iteration ``v <- v P`` from `start` (default: state zero).

    Stops once the L1 change between successive iterates drops below `tol`;
    the returned residual is ``||v P - v||_1`` of the returned vector.

    Raises
    ------
    ConvergenceError
        If `max_iters` iterations do not reach `tol`.
    """
    if tol <= 0:
        raise DomainError("tol must be positive")
    n = chain.dimension
    v = (start or Distribution.point_mass(n, 0)).probs.copy()
    if v.size != n:
        raise DomainError(f"start vector has length {v.size}, chain has {n} states")
    change = math.inf
    it = 0
    while it < max_iters:
        nxt = chain.step(v)
        nxt /= nxt.sum()
        change = float(np.abs(nxt - v).sum())
        v = nxt
        it += 1
        if change < tol:
            break
    else:
        raise ConvergenceError(
            f"power iteration did not converge in {max_iters} iterations (change {change:.3e})",
            residual=change,
            iterations=it,
        )
    residual = float(np.abs(chain.step(v) - v).sum())
    np.clip(v, 0.0, None, out=v)
    v /= v.sum()
    return Distribution(v), SolverInfo(it, residual)


def stationary_direct(chain, limit: int = DIRECT_SOLVE_LIMIT) -> tuple[Distribution, SolverInfo]:
    """Dense solve of ``v (P - I) = 0, sum(v) = 1``; intended as a cross-check on small chains."""
    n = chain.dimension
    if n > limit:
        raise CapacityError(f"dense solve limited to {limit} states, chain has {n}", n)
    a = chain.dense().T - np.eye(n)
    a[-1, :] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    v = np.linalg.solve(a, b)
    np.clip(v, 0.0, None, out=v)
    v /= v.sum()
    residual = float(np.abs(chain.step(v) - v).sum())
    return Distribution(v), SolverInfo(1, residual, method="direct")


@dataclass(frozen=True)
class OutageReport:
    outage_probability: float
    marginal_nd: np.ndarray
    iterations: int = 0
    residual: float = 0.0


def nd_marginal(v, space: StateSpace) -> np.ndarray:
    """Distribution of the top-level count ``n_d``, indexed ``0..M``."""
    probs = v.probs if isinstance(v, Distribution) else np.asarray(v)
    return np.bincount(space.states[:, space.d], weights=probs, minlength=space.M + 1)


def outage(v, space: StateSpace, c: int, info: SolverInfo | None = None) -> OutageReport:
    """Probability that fewer than `c` top-fidelity pairs are stored."""
    if c < 1:
        raise DomainError(f"outage needs c >= 1, got {c}")
    marginal = nd_marginal(v, space)
    if c > space.M:
        warnings.warn(f"c={c} exceeds memory size M={space.M}; outage is 1", RuntimeWarning, stacklevel=2)
        p_out = 1.0
    else:
        p_out = float(marginal[:c].sum())
    return OutageReport(
        p_out, marginal, info.iterations if info else 0, info.residual if info else 0.0
    )


def shortfall_probability(v, space: StateSpace, ladder, c: int) -> float:
    """Probability that the top level holds fewer than `c` pairs after the round's distillation.

    Diagnostic companion to :func:`outage`, which tests the stored count
    before distillation can top it up.
    """
    probs = v.probs if isinstance(v, Distribution) else np.asarray(v)
    d = space.d
    if d == 0:
        return float(probs[space.states[:, 0] < c].sum())
    p = success_probs(ladder)[d - 1]
    total = 0.0
    for r in np.flatnonzero(probs):
        nd = int(space.states[r, d])
        need = c - nd
        if need <= 0:
            continue
        pmf = binomial_pmf(int(space.states[r, d - 1]) // 2, p)
        total += probs[r] * float(pmf[:need].sum())
    return total


def build_chain(space: StateSpace, ladder, c: int, w: int = 0, rule: str = PARTIAL):
    """Round chain for ``w == 0``, bootstrap cycle chain otherwise."""
    pc = build_transition_matrix(space, ladder, c, rule)
    if w == 0:
        return pc
    return compose_bootstrap(build_transition_matrix(space, ladder, 0), pc, w)


def bootstrap_outage(
    space: StateSpace,
    ladder,
    c: int,
    w: int,
    tol: float = DEFAULT_TOL,
    max_iters: int = DEFAULT_MAX_ITERS,
    measure: str = CYCLE_START,
    rule: str = PARTIAL,
) -> OutageReport:
    """Stationary outage under the bootstrap protocol.

    `measure` selects where in the ``w + 1``-round cycle the outage test is
    applied. ``"cycle_start"`` (default) uses the stationary vector of the
    cycle chain itself, i.e. the memory right after a consumption round and
    refill; this is the reading that reproduces the reference thresholds.
    ``"pre_consumption"`` uses the distribution entering the consumption
    round. Both coincide for ``w == 0``. `rule` is the consumption rule, see
    :func:`consume`.
    """
    if measure not in MEASUREMENT_POINTS:
        raise DomainError(f"unknown measurement point {measure!r}")
    RoundPolicy(c, w, rule).check_ergodicity(ladder, space.M)
    chain = build_chain(space, ladder, c, w, rule)
    v, info = stationary(chain, tol=tol, max_iters=max_iters)
    if measure == PRE_CONSUMPTION:
        u = chain.pre_consumption(v.probs)
        v = Distribution(u / u.sum())
    return outage(v, space, c, info)


def reaches_state_zero(matrix: TransitionMatrix) -> bool:
    """True if every state has a positive-probability path to state zero."""
    g = sp.csr_matrix(matrix.matrix.T > 0)
    seen = np.zeros(matrix.dimension, dtype=bool)
    seen[0] = True
    frontier = [0]
    while frontier:
        nxt = []
        for j in frontier:
            for i in g.indices[g.indptr[j]:g.indptr[j + 1]]:
                if not seen[i]:
                    seen[i] = True
                    nxt.append(int(i))
        frontier = nxt
    return bool(seen.all())


def enumerate_outcomes(state: Sequence[int]):
    """All outcome vectors ``(new_1, ..., new_d)`` valid for `state`, ascending."""
    return itertools.product(*(range(n // 2 + 1) for n in state[:-1]))


__all__ = [
    "ALL_OR_NOTHING",
    "PARTIAL",
    "consume",
    "CYCLE_START",
    "PRE_CONSUMPTION",
    "BootstrapChain",
    "Distribution",
    "OutageReport",
    "RoundPolicy",
    "SolverInfo",
    "TransitionMatrix",
    "apply_round",
    "binomial_pmf",
    "bootstrap_outage",
    "build_chain",
    "build_transition_matrix",
    "compose_bootstrap",
    "enumerate_outcomes",
    "nd_marginal",
    "outage",
    "outcome_probability",
    "reaches_state_zero",
    "shortfall_probability",
    "stationary",
    "stationary_direct",
    "success_probs",
    "zero_state_index",
]
