"""Command-line front end.

Every subcommand accepts ``--config FILE`` (a JSON RunConfig document);
explicit flags override values from the file. Exit codes: 0 success,
2 validation error, 3 convergence failure, 4 capacity exceeded.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import sys
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dimensioning import SweepSpec, sweep
from .distillation import BellDiagonalState, build_ladder, werner_state
from .errors import CapacityError, ConvergenceError, DomainError
from .markov import (
    CONSUMPTION_RULES,
    CYCLE_START,
    DEFAULT_MAX_ITERS,
    DEFAULT_TOL,
    MEASUREMENT_POINTS,
    PARTIAL,
    PRE_CONSUMPTION,
    Distribution,
    RoundPolicy,
    build_chain,
    outage,
    shortfall_probability,
    stationary,
    stationary_direct,
)
from .montecarlo import PRNG_NAME, SimConfig, simulate
from .statespace import MemoryConfig, enumerate_states

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_CONVERGENCE = 3
EXIT_CAPACITY = 4

log = logging.getLogger("qmemdim")


class ConfigError(Exception):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


def fmt(x) -> str:
    """Numbers with 12 significant digits; everything else via str."""
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.12g}"
    return "" if x is None else str(x)


@dataclass
class RunConfig:
    memory_size: int | None = None
    max_steps: int = 2
    consumption: int = 1
    bootstrap_wait: int = 0
    f0: float | None = None
    coefficients: tuple[float, float, float, float] | None = None
    tol: float = DEFAULT_TOL
    max_iters: int = DEFAULT_MAX_ITERS
    measure: str = CYCLE_START
    consumption_rule: str = PARTIAL
    format: str = "csv"
    out: str | None = None
    seed: int = 0
    rounds: int = 1_000_000
    burn_in: int = 1000

    def validate(self, need_memory: bool = True) -> "RunConfig":
        if (self.f0 is None) == (self.coefficients is None):
            raise ConfigError("f0", "exactly one of f0 or explicit coefficients (a, b, c, d) is required")
        if self.f0 is not None and not (0.0 <= self.f0 <= 1.0):
            raise ConfigError("f0", f"{self.f0} outside [0, 1]")
        if self.coefficients is not None:
            if len(self.coefficients) != 4:
                raise ConfigError("coefficients", "need four values")
            try:
                BellDiagonalState(*self.coefficients)
            except DomainError as exc:
                raise ConfigError("coefficients", str(exc)) from None
        if need_memory and (self.memory_size is None or self.memory_size < 1):
            raise ConfigError("memory_size", "a positive memory size is required")
        checks = [
            ("max_steps", self.max_steps >= 0, "must be >= 0"),
            ("consumption", self.consumption >= 0, "must be >= 0"),
            ("bootstrap_wait", self.bootstrap_wait >= 0, "must be >= 0"),
            ("tol", self.tol > 0, "must be > 0"),
            ("max_iters", self.max_iters >= 1, "must be >= 1"),
            ("measure", self.measure in MEASUREMENT_POINTS, f"must be one of {MEASUREMENT_POINTS}"),
            ("consumption_rule", self.consumption_rule in CONSUMPTION_RULES,
             f"must be one of {CONSUMPTION_RULES}"),
            ("format", self.format in ("csv", "json"), "must be csv or json"),
            ("rounds", self.rounds >= 1, "must be >= 1"),
            ("burn_in", 0 <= self.burn_in < self.rounds, "must satisfy 0 <= burn_in < rounds"),
            ("seed", 0 <= self.seed < 2**64, "must be a 64-bit unsigned integer"),
        ]
        for name, ok, msg in checks:
            if not ok:
                raise ConfigError(name, msg)
        return self

    def initial_state(self) -> BellDiagonalState:
        if self.f0 is not None:
            return werner_state(self.f0)
        return BellDiagonalState(*self.coefficients)

    def to_dict(self) -> dict:
        data = dataclasses.asdict(self)
        if data["coefficients"] is not None:
            data["coefficients"] = list(data["coefficients"])
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown configuration field")
        data = dict(data)
        if data.get("coefficients") is not None:
            data["coefficients"] = tuple(float(x) for x in data["coefficients"])
        return cls(**data)


_FLAG_FIELDS = {
    "m": "memory_size",
    "d": "max_steps",
    "consumption": "consumption",
    "wait": "bootstrap_wait",
    "f0": "f0",
    "tol": "tol",
    "max_iters": "max_iters",
    "measure": "measure",
    "consumption_rule": "consumption_rule",
    "format": "format",
    "out": "out",
    "seed": "seed",
    "rounds": "rounds",
    "burn_in": "burn_in",
}


def resolve_config(args: argparse.Namespace) -> RunConfig:
    data = {}
    if getattr(args, "config", None):
        with open(args.config) as fh:
            data = json.load(fh)
    cfg = RunConfig.from_dict(data)
    for flag, name in _FLAG_FIELDS.items():
        value = getattr(args, flag, None)
        if value is not None:
            setattr(cfg, name, value)
    coefs = [getattr(args, k, None) for k in ("a", "b", "c", "d_coef")]
    if any(x is not None for x in coefs):
        if any(x is None for x in coefs):
            raise ConfigError("coefficients", "--a, --b, --c and --d-coef must be given together")
        cfg.coefficients = tuple(coefs)
        if args.f0 is None:
            cfg.f0 = None
    elif args.f0 is not None:
        cfg.coefficients = None
    return cfg


def _emit(text: str, out: str | None) -> None:
    if out:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _csv(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(x) for x in row])
    return buf.getvalue()


def _json(obj) -> str:
    def default(x):
        if isinstance(x, np.ndarray):
            return x.tolist()
        if isinstance(x, np.generic):
            return x.item()
        raise TypeError(type(x))

    return json.dumps(obj, indent=2, default=default) + "\n"


def _ladder_and_space(cfg: RunConfig):
    ladder = build_ladder(cfg.initial_state(), cfg.max_steps)
    space = enumerate_states(MemoryConfig(cfg.memory_size, cfg.max_steps))
    return ladder, space


def cmd_ladder(cfg: RunConfig) -> str:
    cfg.validate(need_memory=False)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ladder = build_ladder(cfg.initial_state(), cfg.max_steps)
    if ladder.has_perfect_step:
        log.warning("perfect state: distillation succeeds with probability 1")
    rows = []
    for i, s in enumerate(ladder.levels):
        p = ladder.success_probs[i] if i < ladder.max_steps else None
        rows.append((i, s.a, s.b, s.c, s.d, p))
    header = ("level", "a", "b", "c", "d", "p_next")
    if cfg.format == "json":
        return _json({"levels": [dict(zip(header, r)) for r in rows]})
    return _csv(header, rows)


def _solve(cfg: RunConfig, space, ladder):
    policy = RoundPolicy(cfg.consumption, cfg.bootstrap_wait, cfg.consumption_rule)
    policy.check_ergodicity(ladder, space.M)
    chain = build_chain(space, ladder, cfg.consumption, cfg.bootstrap_wait, cfg.consumption_rule)
    v, info = stationary(chain, tol=cfg.tol, max_iters=cfg.max_iters)
    return chain, v, info


def _measured(cfg: RunConfig, chain, v: Distribution) -> Distribution:
    if cfg.measure == PRE_CONSUMPTION:
        u = chain.pre_consumption(v.probs)
        return Distribution(u / u.sum())
    return v


def cmd_stationary(cfg: RunConfig, table: str = "states", direct: bool = False) -> str:
    cfg.validate()
    ladder, space = _ladder_and_space(cfg)
    chain, v, info = _solve(cfg, space, ladder)
    marginal = np.bincount(space.states[:, space.d], weights=v.probs, minlength=space.M + 1)
    meta = {"iterations": info.iterations, "residual": info.residual, "n_states": len(space)}
    if direct:
        vd, _ = stationary_direct(chain)
        meta["direct_l1_difference"] = float(np.abs(vd.probs - v.probs).sum())
        log.info("direct solve L1 difference: %.3e", meta["direct_l1_difference"])
    level_cols = [f"n{i}" for i in range(space.d + 1)]
    if cfg.format == "json":
        return _json({
            "config": cfg.to_dict(),
            "meta": meta,
            "states": [
                {**dict(zip(level_cols, map(int, space.states[k]))), "p": float(v.probs[k])}
                for k in range(len(space))
            ],
            "marginal_nd": marginal,
        })
    if table == "marginal":
        return _csv((f"n{space.d}", "p"), enumerate(marginal))
    rows = (list(map(int, space.states[k])) + [v.probs[k]] for k in range(len(space)))
    return _csv(level_cols + ["p"], rows)


def cmd_outage(cfg: RunConfig) -> str:
    cfg.validate()
    if cfg.consumption < 1:
        raise ConfigError("consumption", "outage needs consumption >= 1")
    ladder, space = _ladder_and_space(cfg)
    chain, v, info = _solve(cfg, space, ladder)
    report = outage(_measured(cfg, chain, v), space, cfg.consumption, info)
    u = chain.pre_consumption(v.probs)
    shortfall = shortfall_probability(u / u.sum(), space, ladder, cfg.consumption)
    row = {
        "f0": cfg.f0, "m": cfg.memory_size, "d": cfg.max_steps, "c": cfg.consumption,
        "w": cfg.bootstrap_wait, "measure": cfg.measure,
        "consumption_rule": cfg.consumption_rule, "outage": report.outage_probability,
        "shortfall": shortfall, "iterations": report.iterations, "residual": report.residual,
    }
    if cfg.format == "json":
        return _json({**row, "config": cfg.to_dict(), "marginal_nd": report.marginal_nd})
    return _csv(list(row), [list(row.values())])


def cmd_sweep(spec: SweepSpec, fmt_: str, workers: int | None) -> str:
    result = sweep(spec, workers=workers)
    for flag in result.flags:
        log.warning("%s", flag)
    summary = [
        {"f0": f0, "w": w, "min_memory": result.min_memory.get((f0, w))}
        for f0 in spec.f0_values for w in spec.w_values
    ]
    if fmt_ == "json":
        return _json({
            "spec": spec.to_dict(),
            "rows": [dataclasses.asdict(r) for r in result.rows],
            "min_memory": summary,
            "flags": result.flags,
        })
    for item in summary:
        log.info("min memory f0=%s w=%s: %s", item["f0"], item["w"], item["min_memory"])
    return _csv(
        ("f0", "w", "m", "outage", "iterations", "status"),
        ((r.f0, r.w, r.m, r.outage, r.iterations, "ok" if r.ok else "failed") for r in result.rows),
    )


def cmd_simulate(cfg: RunConfig, compare: bool = True) -> str:
    cfg.validate()
    ladder, space = _ladder_and_space(cfg)
    policy = RoundPolicy(cfg.consumption, cfg.bootstrap_wait, cfg.consumption_rule)
    sim = simulate(
        SimConfig(MemoryConfig(cfg.memory_size, cfg.max_steps), ladder, policy,
                  cfg.rounds, cfg.burn_in, cfg.seed, cfg.measure),
        space,
    )
    row = {
        "seed": cfg.seed, "rounds": cfg.rounds, "burn_in": cfg.burn_in,
        "samples": sim.rounds_counted, "outage_events": sim.outage_events,
        "empirical_outage": sim.empirical_outage, "stderr": sim.outage_stderr,
    }
    if compare and cfg.consumption >= 1:
        chain, v, info = _solve(cfg, space, ladder)
        report = outage(_measured(cfg, chain, v), space, cfg.consumption, info)
        row["analytical_outage"] = report.outage_probability
        row["tv_distance"] = 0.5 * float(np.abs(sim.empirical_occupancy - v.probs).sum())
    if cfg.format == "json":
        return _json({**row, "prng": PRNG_NAME, "config": cfg.to_dict()})
    return _csv(list(row), [list(row.values())])


def _verbosity(p: argparse.ArgumentParser) -> None:
    p.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS)


def _common(p: argparse.ArgumentParser, memory: bool = True) -> None:
    _verbosity(p)
    p.add_argument("--config", help="JSON RunConfig file; flags override its values")
    p.add_argument("--f0", type=float, help="Werner fidelity of raw pairs")
    p.add_argument("--a", type=float, help="explicit Phi+ coefficient")
    p.add_argument("--b", type=float, help="explicit Psi- coefficient")
    p.add_argument("--c", type=float, help="explicit Psi+ coefficient")
    p.add_argument("--d-coef", type=float, dest="d_coef", help="explicit Phi- coefficient")
    p.add_argument("--d", type=int, help="maximum number of distillation steps")
    p.add_argument("--format", choices=("csv", "json"))
    p.add_argument("--out", help="write output here instead of stdout")
    p.add_argument("--save-config", help="write the effective RunConfig as JSON")
    if memory:
        p.add_argument("--m", type=int, help="memory size M (pairs)")
        p.add_argument("--consumption", type=int, help="pairs consumed per consumption round")
        p.add_argument("--wait", type=int, help="bootstrap waiting rounds W per cycle")
        p.add_argument("--tol", type=float)
        p.add_argument("--max-iters", type=int, dest="max_iters")
        p.add_argument("--measure", choices=MEASUREMENT_POINTS,
                       help="where in the bootstrap cycle outage is measured")
        p.add_argument("--consumption-rule", dest="consumption_rule", choices=CONSUMPTION_RULES,
                       help="partial: take what is stored when short; "
                            "all_or_nothing: consume only if c pairs are stored")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qmemdim", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ladder", help="DEJMPS fidelity ladder")
    _common(p, memory=False)

    p = sub.add_parser("stationary", help="stationary distribution over memory states")
    _common(p)
    p.add_argument("--table", choices=("states", "marginal"), default="states")
    p.add_argument("--direct", action="store_true", help="cross-check with a dense solve")

    p = sub.add_parser("outage", help="stationary outage probability")
    _common(p)

    p = sub.add_parser("sweep", help="outage vs memory sweep from a JSON spec")
    p.add_argument("spec", help="JSON {f0, c, d, w, m_min, m_max, target}")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--out")
    _verbosity(p)
    p.add_argument("--workers", type=int, help="parallel processes (default: QMEMDIM_THREADS or CPU count)")

    p = sub.add_parser("simulate", help="Monte Carlo trajectory vs analytical chain")
    _common(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--rounds", type=int)
    p.add_argument("--burn-in", type=int, dest="burn_in")
    p.add_argument("--no-compare", action="store_true")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * args.verbose, format="%(levelname)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        if args.command == "sweep":
            with open(args.spec) as fh:
                spec = SweepSpec.from_dict(json.load(fh))
            _emit(cmd_sweep(spec, args.format, args.workers), args.out)
            return EXIT_OK
        cfg = resolve_config(args)
        if args.command == "ladder":
            text = cmd_ladder(cfg)
        elif args.command == "stationary":
            text = cmd_stationary(cfg, args.table, args.direct)
        elif args.command == "outage":
            text = cmd_outage(cfg)
        else:
            text = cmd_simulate(cfg, compare=not args.no_compare)
        if args.save_config:
            with open(args.save_config, "w") as fh:
                json.dump(cfg.to_dict(), fh, indent=2)
                fh.write("\n")
        _emit(text, cfg.out)
    except ConfigError as exc:
        print(f"error: invalid {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (DomainError, KeyError, TypeError, ValueError) as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ConvergenceError as exc:
        print(f"error: {exc} (residual {exc.residual:.3e})", file=sys.stderr)
        return EXIT_CONVERGENCE
    except CapacityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
