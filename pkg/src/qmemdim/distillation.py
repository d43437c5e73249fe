"""Bell-diagonal states and the DEJMPS distillation ladder.

Coefficients are always ordered ``(a, b, c, d)`` as the weights of
``(Phi+, Psi-, Psi+, Phi-)``; ``a`` is the fidelity with respect to Phi+.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

from .errors import DegenerateStateError, DomainError

NORM_ATOL = 1e-12


@dataclass(frozen=True)
class BellDiagonalState:
    a: float
    b: float
    c: float
    d: float

    def __post_init__(self):
        for name in ("a", "b", "c", "d"):
            value = getattr(self, name)
            if not (0.0 <= value <= 1.0) or math.isnan(value):
                raise DomainError(f"coefficient {name}={value!r} outside [0, 1]")
        total = self.a + self.b + self.c + self.d
        if abs(total - 1.0) > NORM_ATOL:
            raise DomainError(f"coefficients sum to {total!r}, expected 1")

    @property
    def fidelity(self) -> float:
        return self.a

    @property
    def success_probability(self) -> float:
        """Probability that a symmetric DEJMPS round on two copies succeeds."""
        return (self.a + self.b) ** 2 + (self.c + self.d) ** 2

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.a, self.b, self.c, self.d)


def werner_state(f0: float) -> BellDiagonalState:
    """Werner state with fidelity `f0`, error weight split evenly over the other three Bell states."""
    if not (0.0 <= f0 <= 1.0):
        raise DomainError(f"fidelity {f0!r} outside [0, 1]")
    e = (1.0 - f0) / 3.0
    return BellDiagonalState(f0, e, e, e)


def dejmps_step(s: BellDiagonalState) -> tuple[BellDiagonalState, float]:
    """Distil two copies of `s` into one.

    Returns
    -------
    state : BellDiagonalState
        The post-selected output state on success.
    p_success : float
        Success probability ``(a + b)**2 + (c + d)**2``.
    """
    a, b, c, d = s.as_tuple()
    n = (a + b) ** 2 + (c + d) ** 2
    if n <= 0.0:
        raise DegenerateStateError("normalisation constant is zero")
    out = ((a * a + b * b) / n, 2.0 * c * d / n, (c * c + d * d) / n, 2.0 * a * b / n)
    # renormalise away rounding so the output satisfies the invariant exactly
    total = sum(out)
    out = tuple(min(1.0, max(0.0, x / total)) for x in out)
    return BellDiagonalState(*out), n


@dataclass(frozen=True)
class DistillationLadder:
    """Fidelity ladder ``levels[0..d]`` with ``success_probs[i]`` for level i -> i+1."""

    levels: tuple[BellDiagonalState, ...]
    success_probs: tuple[float, ...]
    max_steps: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "max_steps", len(self.levels) - 1)
        if len(self.levels) < 1:
            raise DomainError("ladder needs at least one level")
        if len(self.success_probs) != self.max_steps:
            raise DomainError(
                f"expected {self.max_steps} success probabilities, got {len(self.success_probs)}"
            )
        for i, p in enumerate(self.success_probs):
            if not (0.0 < p <= 1.0):
                raise DomainError(f"success probability {i}->{i + 1} = {p!r} outside (0, 1]")
            if abs(p - self.levels[i].success_probability) > 1e-12:
                raise DomainError(f"success probability {i}->{i + 1} inconsistent with level {i}")

    @property
    def fidelities(self) -> tuple[float, ...]:
        return tuple(s.a for s in self.levels)

    @property
    def has_perfect_step(self) -> bool:
        """True when some step succeeds with certainty (the chain may then lose ergodicity)."""
        return any(p >= 1.0 for p in self.success_probs)


def build_ladder(initial: BellDiagonalState, d: int) -> DistillationLadder:
    """Iterate symmetric DEJMPS `d` times starting from `initial`."""
    if d < 0:
        raise DomainError(f"max_steps must be nonnegative, got {d}")
    levels = [initial]
    probs = []
    for _ in range(d):
        nxt, p = dejmps_step(levels[-1])
        levels.append(nxt)
        probs.append(p)
    ladder = DistillationLadder(tuple(levels), tuple(probs))
    if ladder.has_perfect_step:
        warnings.warn(
            "a distillation step succeeds with probability 1; "
            "uniqueness of the stationary distribution is not guaranteed",
            RuntimeWarning,
            stacklevel=2,
        )
    return ladder

