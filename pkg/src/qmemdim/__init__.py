"""Dimensioning of quantum memories that store DEJMPS-distilled EPR pairs."""

from .dimensioning import SweepResult, SweepSpec, min_memory, sweep
from .distillation import BellDiagonalState, DistillationLadder, build_ladder, dejmps_step, werner_state
from .errors import CapacityError, ConvergenceError, DegenerateStateError, DomainError, QMemError
from .markov import (
    CYCLE_START,
    PRE_CONSUMPTION,
    BootstrapChain,
    Distribution,
    OutageReport,
    RoundPolicy,
    TransitionMatrix,
    apply_round,
    bootstrap_outage,
    build_chain,
    build_transition_matrix,
    compose_bootstrap,
    outage,
    outcome_probability,
    stationary,
    stationary_direct,
)
from .montecarlo import SimConfig, SimResult, empirical_nd_marginal, simulate
from .statespace import MemoryConfig, StateSpace, enumerate_states, zero_state_index

__version__ = "0.1.0"
