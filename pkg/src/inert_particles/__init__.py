"""Simulation and validation of a Brownian particle system above an inert particle."""

from .analysis import (
    collision_ordering_test, ergodic_decay_proxy, hitting_time_tail, ks_distance, lln_slopes,
    stationary_validation,
)
from .dynamics import (
    SimGrid, Trajectory, UnrankedTrajectory, local_time_upper_bound_check, rank_positions,
    simulate_gap_process, simulate_unranked,
)
from .errors import ConvergenceError, InputError, InsufficientDataError
from .model import ModelParams, build_drift_matrix, build_reflection_matrix
from .skorokhod import DiscretePath, SkorokhodSolution, skorokhod_lipschitz_probe, solve_skorokhod
from .stationary import (
    StationaryLaw, stationary_density, stationary_law, stationary_sample, verify_bar_identities,
)

__version__ = "0.1.0"
