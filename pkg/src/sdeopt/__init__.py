"""Stochastic optimal control by Monte Carlo gradient methods.

The package is organized around six modules:

- ``sde_core``         problem data, Euler-Maruyama simulation, cost estimation
- ``malliavin_flow``   stochastic flows and Malliavin derivatives along paths
- ``malgpro``          Malliavin-based Gateaux gradients and the projected
                       gradient solve loop
- ``adjoint_baseline`` stochastic-maximum-principle Hamiltonian machinery and
                       the single-sample adjoint descent baseline
- ``benchmarks``       ready-made control problems with analytical oracles
- ``cli_harness``      command-line runner producing CSV/JSON artifacts
"""

__version__ = "0.1.0"

# Imported first on purpose: its import applies the SDEOPT_NUM_THREADS
# override before any numerical library is loaded.
from .cli_harness import RunSpec, SpecError, load_spec

from .sde_core import (
    ControlProblem,
    TimeGrid,
    PathBundle,
    DivergedPathError,
    build_time_grid,
    sample_wiener,
    simulate_forward,
    evaluate_cost,
)
from .malliavin_flow import (
    FlowBundle,
    MalliavinSlice,
    IllConditionedFlowError,
    propagate_flow_from,
    propagate_flow_factorized,
    malliavin_derivative,
    scalar_malliavin_closed_form,
)
from .malgpro import (
    AdmissibleSet,
    PiecewiseControl,
    SolveResult,
    NonFiniteGradientError,
    UnstableProblemError,
    gateaux_gradient_scalar,
    gateaux_gradient_vector,
    project,
    step,
    solve,
    optimality_residual,
)
from .adjoint_baseline import (
    AdjointPath,
    hamiltonian,
    hamiltonian_grad,
    adsgd_backward,
    adsgd_gradient,
    adsgd_solve,
)
from .benchmarks import (
    BenchmarkProblem,
    RiccatiSolution,
    scalar_blackscholes,
    scalar_sqrt_diffusion,
    vector_tracking,
    vector_nonlinear,
    lq_problem,
    riccati_oracle,
    control_error,
    get_benchmark,
    REGISTRY,
)

__all__ = [
    "__version__",
    "RunSpec",
    "SpecError",
    "load_spec",
    "ControlProblem",
    "TimeGrid",
    "PathBundle",
    "DivergedPathError",
    "build_time_grid",
    "sample_wiener",
    "simulate_forward",
    "evaluate_cost",
    "FlowBundle",
    "MalliavinSlice",
    "IllConditionedFlowError",
    "propagate_flow_from",
    "propagate_flow_factorized",
    "malliavin_derivative",
    "scalar_malliavin_closed_form",
    "AdmissibleSet",
    "PiecewiseControl",
    "SolveResult",
    "NonFiniteGradientError",
    "UnstableProblemError",
    "gateaux_gradient_scalar",
    "gateaux_gradient_vector",
    "project",
    "step",
    "solve",
    "optimality_residual",
    "AdjointPath",
    "hamiltonian",
    "hamiltonian_grad",
    "adsgd_backward",
    "adsgd_gradient",
    "adsgd_solve",
    "BenchmarkProblem",
    "RiccatiSolution",
    "scalar_blackscholes",
    "scalar_sqrt_diffusion",
    "vector_tracking",
    "vector_nonlinear",
    "lq_problem",
    "riccati_oracle",
    "control_error",
    "get_benchmark",
    "REGISTRY",
]
