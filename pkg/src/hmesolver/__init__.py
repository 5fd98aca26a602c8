"""Solver for joint reaction-counting densities of jump-diffusion hybrid models.

Workflow: define a reaction network with a slow/fast tier split, integrate the
conditional-moment ODE system on an adaptively grown slow-counter domain,
reconstruct each conditional density by maximum entropy, and validate the
assembled joint density against dense master-equation and trajectory oracles.
"""

from .config import MaxEntConfig, OracleConfig, OutputConfig, RunConfig, parse_config
from .integrator import (
    ClampCounters,
    ExpansionMassInit,
    LatticeDomain,
    RunStats,
    Scheme,
    SolverConfig,
    build_fast_domain,
    build_initial_domain,
    expand_slow_domain,
    full_feasible_lattice,
    init_poisson,
    poisson_joint,
    run_to_time,
    step,
)
from .maxent import (
    MaxEntProblem,
    MaxEntSolution,
    assemble_joint,
    conditional_problems,
    dual_solve,
    entropy,
    moments_of,
)
from .moments import (
    ClosureConfig,
    MomentField,
    central_moment_rhs,
    central_moment_value,
    cond_mean_rhs,
    expected_propensity,
    marginal_rhs,
    second_order_indices,
    shifted_central_expectation,
    taylor_closed_expectation,
)
from .network import (
    Kinetics,
    PropensityDecomposition,
    Reaction,
    ReactionNetwork,
    Tier,
    decompose_propensity,
    propensity,
    validate_network,
)
from .oracles import JointDensityGrid, cme_solve, ssa_simulate, total_variation

__version__ = "0.1.0"

__all__ = [
    "ClampCounters",
    "ClosureConfig",
    "ExpansionMassInit",
    "JointDensityGrid",
    "Kinetics",
    "LatticeDomain",
    "MaxEntConfig",
    "MaxEntProblem",
    "MaxEntSolution",
    "MomentField",
    "OracleConfig",
    "OutputConfig",
    "PropensityDecomposition",
    "Reaction",
    "ReactionNetwork",
    "RunConfig",
    "RunStats",
    "Scheme",
    "SolverConfig",
    "Tier",
    "assemble_joint",
    "build_fast_domain",
    "build_initial_domain",
    "central_moment_rhs",
    "central_moment_value",
    "cme_solve",
    "cond_mean_rhs",
    "conditional_problems",
    "decompose_propensity",
    "dual_solve",
    "entropy",
    "expand_slow_domain",
    "expected_propensity",
    "full_feasible_lattice",
    "init_poisson",
    "marginal_rhs",
    "moments_of",
    "parse_config",
    "poisson_joint",
    "propensity",
    "run_to_time",
    "second_order_indices",
    "shifted_central_expectation",
    "ssa_simulate",
    "step",
    "taylor_closed_expectation",
    "total_variation",
    "validate_network",
]
