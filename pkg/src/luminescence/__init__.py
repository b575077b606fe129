"""Stochastic luminescence: exact simulation, large-deviation Hamiltonian,
optimal paths and large-emission asymptotics of a pumped particle system."""
from .errors import LuminescenceError
from .hamiltonian import (
    PhasePoint,
    Velocity,
    hamiltonian,
    hamiltonian_field,
    lagrangian,
    q_factor,
    rate_functional,
)
from .large_emission import (
    StationarySolution,
    asymptotic_share,
    emission_split,
    share_convergence,
    stationary_solution,
)
from .model import ModelSpec, ReactionTriplet, load_model
from .optimal_path import BoundaryData, fluid_trajectory, integrate_hamiltonian, solve_bvp
from .simulator import simulate, scaled_path, total_emission
from .validation import conditioned_share, estimate_tail, ldp_slope

__version__ = "0.1.0"
