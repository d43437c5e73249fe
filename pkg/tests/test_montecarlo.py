import math
import warnings

import numpy as np
import pytest

from qmemdim.distillation import build_ladder, werner_state
from qmemdim.errors import DomainError
from qmemdim.markov import ALL_OR_NOTHING, PRE_CONSUMPTION, RoundPolicy, bootstrap_outage, build_chain, stationary
from qmemdim.montecarlo import SimConfig, SimResult, empirical_nd_marginal, simulate, simulate_replications
from qmemdim.statespace import MemoryConfig, enumerate_states


def config(m, d, c, f0=0.9, w=0, rounds=20_000, burn_in=100, seed=1, **kw):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ladder = build_ladder(werner_state(f0), d)
    rule = kw.pop("rule", "partial")
    return SimConfig(MemoryConfig(m, d), ladder, RoundPolicy(c, w, rule), rounds, burn_in, seed, **kw)


def test_perfect_ladder_is_deterministic():
    # p = 1, c = 0: (8,0,0) (4,4,0) (4,2,2) (3,2,3) (3,1,4) (2,2,4) (2,1,5) (1,2,5) (2,0,6) then
    # (1,1,6) forever
    cfg = config(8, 2, 0, f0=1.0, rounds=50, burn_in=9, check_states=True)
    space = enumerate_states(cfg.memory)
    a = simulate(cfg, space)
    b = simulate(SimConfig(cfg.memory, cfg.ladder, cfg.policy, 50, 9, seed=999), space)
    np.testing.assert_array_equal(a.empirical_occupancy, b.empirical_occupancy)
    assert a.empirical_occupancy[space.rank((1, 1, 6))] == 1.0
    early = simulate(SimConfig(cfg.memory, cfg.ladder, cfg.policy, 9, 8, seed=0), space)
    assert early.empirical_occupancy[space.rank((2, 0, 6))] == 1.0


def test_seed_reproducibility():
    cfg = config(16, 2, 1, rounds=50_000, seed=42)
    a = simulate(cfg)
    b = simulate(cfg)
    assert a.outage_events == b.outage_events
    np.testing.assert_array_equal(a.empirical_occupancy, b.empirical_occupancy)
    c = simulate(config(16, 2, 1, rounds=50_000, seed=43))
    assert not np.array_equal(a.empirical_occupancy, c.empirical_occupancy)


def test_result_invariants():
    res = simulate(config(11, 2, 1, rounds=30_000, check_states=True))
    assert res.empirical_occupancy.sum() == pytest.approx(1.0, abs=1e-12)
    assert res.empirical_outage == res.outage_events / res.rounds_counted
    assert res.rounds_counted == 30_000 - 100


def test_point_mass_marginal():
    space = enumerate_states(MemoryConfig(6, 2))
    occ = np.zeros(len(space))
    occ[0] = 1.0
    marginal = empirical_nd_marginal(SimResult(occ, 1.0, 1, 1), space)
    assert marginal[0] == 1.0 and marginal.sum() == 1.0


def test_top_level_mode_from_simulation():
    cfg = config(16, 2, 1, rounds=200_000, burn_in=1000, seed=5)
    space = enumerate_states(cfg.memory)
    marginal = empirical_nd_marginal(simulate(cfg, space), space)
    assert marginal.sum() == pytest.approx(1.0, abs=1e-12)
    assert int(np.argmax(marginal)) in {6, 7, 8}


@pytest.mark.parametrize(
    "m,c,w,kw",
    [
        (11, 1, 0, {}),
        (12, 2, 0, {"rule": ALL_OR_NOTHING}),
        (34, 13, 6, {}),
        (34, 13, 6, {"measure": PRE_CONSUMPTION}),
        (20, 4, 2, {}),
        (16, 1, 0, {}),
    ],
)
def test_outage_consistent_with_chain(m, c, w, kw):
    cfg = config(m, 2, c, w=w, rounds=(w + 1) * 100_000, burn_in=(w + 1) * 200, seed=11, **kw)
    space = enumerate_states(cfg.memory)
    res = simulate(cfg, space)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        analytic = bootstrap_outage(
            space, cfg.ladder, c, w, measure=cfg.measure, rule=cfg.policy.consumption_rule
        ).outage_probability
    # batch means absorb autocorrelation; the binomial floor covers zero observed events
    se = max(res.batch_stderr, math.sqrt(analytic * (1 - analytic) / res.rounds_counted))
    assert abs(res.empirical_outage - analytic) < 4 * se
    v, _ = stationary(build_chain(space, cfg.ladder, c, w, cfg.policy.consumption_rule))
    assert 0.5 * np.abs(res.empirical_occupancy - v.probs).sum() < 0.05


def test_replications_merge_deterministically():
    cfg = config(10, 2, 1, rounds=5_000, seed=3)
    a = simulate_replications(cfg, 3)
    b = simulate_replications(cfg, 3)
    np.testing.assert_array_equal(a.empirical_occupancy, b.empirical_occupancy)
    assert a.rounds_counted == 3 * (5_000 - 100)


def test_d0_simulation():
    res = simulate(config(5, 0, 3, rounds=100, burn_in=0))
    assert res.empirical_outage == 0.0
    res = simulate(config(2, 0, 3, rounds=100, burn_in=0))
    assert res.empirical_outage == 1.0


@pytest.mark.parametrize("kw", [{"rounds": 10, "burn_in": 10}, {"seed": -1}, {"seed": 2**64}, {"measure": "x"}])
def test_config_validation(kw):
    with pytest.raises(DomainError):
        config(5, 1, 1, **kw)
