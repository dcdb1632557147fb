"""Consensus-based optimization, its particle-swarm relative, and mean-field diagnostics."""

from .cbo import OptimizationResult, TrajectoryRecord, em_step, run_optimize, simulate
from .core import (
    AssumptionReport,
    ConsensusPoint,
    ConsensusTrajectory,
    CostFunction,
    EnsembleState,
    GrowthConstants,
    SimParams,
    check_assumptions,
    consensus_point,
    laplace_value,
    make_cost,
    register_cost,
    weights_logsumexp,
)
from .errors import (
    CbomfError,
    ConfigError,
    DomainError,
    IntegrationError,
    NumericalError,
    PicardConvergenceError,
    PreconditionError,
    SchemeError,
)
from .laws import InitialLaw
from .meanfield import (
    TestFunction,
    fphi_residual,
    fphi_scaling_experiment,
    increment_probe,
    mckean_picard,
    moment_diagnostics,
    w2_convergence,
    xalpha_bound_check,
)
from .metrics import histogram_l1, moments, w2_1d, w2_assignment, w2_sliced
from .pde1d import GridDensity, PdeParams, duality_pairing_check, pde_solve, pde_step, pde_vs_particles
from .pso import PsoParams, pso_moment_diagnostics, pso_simulate

__version__ = "0.1.0"
