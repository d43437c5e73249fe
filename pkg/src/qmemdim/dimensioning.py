"""Outage-vs-memory sweeps and minimum-memory search."""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

from .distillation import build_ladder, werner_state
from .errors import DomainError, QMemError
from .markov import CYCLE_START, DEFAULT_MAX_ITERS, DEFAULT_TOL, PARTIAL, bootstrap_outage
from .statespace import MemoryConfig, enumerate_states

log = logging.getLogger(__name__)

THREADS_ENV = "QMEMDIM_THREADS"


def default_workers() -> int:
    value = os.environ.get(THREADS_ENV)
    if value:
        return max(1, int(value))
    return os.cpu_count() or 1


@dataclass(frozen=True)
class SweepSpec:
    f0_values: tuple[float, ...]
    c: int
    d: int
    w_values: tuple[int, ...]
    m_min: int
    m_max: int
    target: float
    tol: float = DEFAULT_TOL
    max_iters: int = DEFAULT_MAX_ITERS
    measure: str = CYCLE_START
    consumption_rule: str = PARTIAL

    def __post_init__(self):
        object.__setattr__(self, "f0_values", tuple(float(f) for f in self.f0_values))
        object.__setattr__(self, "w_values", tuple(int(w) for w in self.w_values))
        if not self.f0_values or not self.w_values:
            raise DomainError("f0_values and w_values must be nonempty")
        if self.c < 1:
            raise DomainError(f"c must be positive, got {self.c}")
        if self.d < 0 or any(w < 0 for w in self.w_values):
            raise DomainError("d and w values must be nonnegative")
        if not (1 <= self.m_min <= self.m_max):
            raise DomainError(f"empty memory range [{self.m_min}, {self.m_max}]")
        if not (0.0 < self.target < 1.0):
            raise DomainError(f"target outage {self.target!r} outside (0, 1)")

    @classmethod
    def from_dict(cls, data: dict) -> "SweepSpec":
        """Build from the JSON sweep document ``{f0, c, d, w, m_min, m_max, target}``."""
        f0 = data["f0"]
        w = data.get("w", [0])
        return cls(
            f0_values=tuple(f0) if isinstance(f0, list) else (f0,),
            c=int(data["c"]),
            d=int(data["d"]),
            w_values=tuple(w) if isinstance(w, list) else (w,),
            m_min=int(data["m_min"]),
            m_max=int(data["m_max"]),
            target=float(data["target"]),
            tol=float(data.get("tol", DEFAULT_TOL)),
            max_iters=int(data.get("max_iters", DEFAULT_MAX_ITERS)),
            measure=data.get("measure", CYCLE_START),
            consumption_rule=data.get("consumption_rule", PARTIAL),
        )

    def to_dict(self) -> dict:
        return {
            "f0": list(self.f0_values),
            "c": self.c,
            "d": self.d,
            "w": list(self.w_values),
            "m_min": self.m_min,
            "m_max": self.m_max,
            "target": self.target,
            "tol": self.tol,
            "max_iters": self.max_iters,
            "measure": self.measure,
            "consumption_rule": self.consumption_rule,
        }


@dataclass(frozen=True)
class SweepRow:
    f0: float
    w: int
    m: int
    outage: float | None
    iterations: int
    wall_time: float
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class SweepResult:
    rows: list[SweepRow]
    min_memory: dict[tuple[float, int], int]
    flags: list[str] = field(default_factory=list)


def outage_at(
    f0: float, c: int, d: int, w: int, m: int,
    tol: float = DEFAULT_TOL, max_iters: int = DEFAULT_MAX_ITERS, measure: str = CYCLE_START,
    rule: str = PARTIAL,
):
    ladder = build_ladder(werner_state(f0), d)
    space = enumerate_states(MemoryConfig(m, d))
    return bootstrap_outage(
        space, ladder, c, w, tol=tol, max_iters=max_iters, measure=measure, rule=rule
    )


def _cell(args) -> SweepRow:
    f0, c, d, w, m, tol, max_iters, measure, rule = args
    start = time.perf_counter()
    try:
        report = outage_at(f0, c, d, w, m, tol, max_iters, measure, rule)
    except QMemError as exc:
        log.warning("sweep cell f0=%s w=%s m=%s failed: %s", f0, w, m, exc)
        return SweepRow(f0, w, m, None, getattr(exc, "iterations", 0),
                        time.perf_counter() - start, str(exc))
    return SweepRow(f0, w, m, report.outage_probability, report.iterations,
                    time.perf_counter() - start)


def _min_from_rows(rows: list[SweepRow], target: float) -> int | None:
    for row in rows:
        if row.ok and row.outage <= target:
            return row.m
    return None


def sweep(spec: SweepSpec, workers: int | None = None) -> SweepResult:
    """Evaluate every ``(f0, w, m)`` cell; rows come back in spec order.

    A cell whose solver fails is recorded with ``error`` set rather than
    aborting the sweep.
    """
    cells = [
        (f0, spec.c, spec.d, w, m, spec.tol, spec.max_iters, spec.measure, spec.consumption_rule)
        for f0 in spec.f0_values
        for w in spec.w_values
        for m in range(spec.m_min, spec.m_max + 1)
    ]
    workers = default_workers() if workers is None else workers
    if workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(cells))) as pool:
            rows = list(pool.map(_cell, cells))
    else:
        rows = [_cell(cell) for cell in cells]

    min_memory = {}
    flags = []
    per_m = spec.m_max - spec.m_min + 1
    for a, f0 in enumerate(spec.f0_values):
        previous = None
        for b, w in enumerate(spec.w_values):
            offset = (a * len(spec.w_values) + b) * per_m
            series = rows[offset:offset + per_m]
            best = _min_from_rows(series, spec.target)
            if best is not None:
                min_memory[(f0, w)] = best
            failed = [r.m for r in series if not r.ok]
            if failed:
                flags.append(f"f0={f0} w={w}: solver failed at m={failed}")
            if previous is not None and best is not None and w > previous[0] and best > previous[1]:
                flags.append(
                    f"f0={f0}: min memory increased from {previous[1]} (w={previous[0]}) "
                    f"to {best} (w={w})"
                )
            if best is not None:
                previous = (w, best)
    return SweepResult(rows, min_memory, flags)


def min_memory(
    f0: float,
    c: int,
    d: int,
    w: int,
    target: float,
    search_range: tuple[int, int],
    tol: float = DEFAULT_TOL,
    max_iters: int = DEFAULT_MAX_ITERS,
    measure: str = CYCLE_START,
    rule: str = PARTIAL,
    exhaustive: bool = False,
) -> int | None:
    """Smallest memory size in `search_range` whose outage is at most `target`.

    The search probes exponentially upward, bisects the bracket it finds, and
    then confirms the boundary explicitly: the returned ``M`` meets the target
    and ``M - 1`` (if in range) does not. Outage is not known to be monotone
    in ``M``, so when the confirmation fails the search keeps stepping down.
    With ``exhaustive=True`` every ``M`` is scanned in ascending order.
    """
    if not (0.0 < target < 1.0):
        raise DomainError(f"target outage {target!r} outside (0, 1)")
    lo, hi = search_range
    if lo < 1 or lo > hi:
        raise DomainError(f"bad search range {search_range}")
    cache: dict[int, float] = {}

    def meets(m: int) -> bool:
        if m not in cache:
            cache[m] = outage_at(f0, c, d, w, m, tol, max_iters, measure, rule).outage_probability
            log.debug("f0=%s c=%s d=%s w=%s M=%s outage=%.6g", f0, c, d, w, m, cache[m])
        return cache[m] <= target

    if exhaustive:
        return next((m for m in range(lo, hi + 1) if meets(m)), None)

    failing = None
    m, step = lo, 1
    while not meets(m):
        failing = m
        if m == hi:
            return None
        m = min(m + step, hi)
        step *= 2
    passing = m
    if failing is not None:
        while passing - failing > 1:
            mid = (passing + failing) // 2
            if meets(mid):
                passing = mid
            else:
                failing = mid
    while passing > lo and meets(passing - 1):
        passing -= 1
    return passing
