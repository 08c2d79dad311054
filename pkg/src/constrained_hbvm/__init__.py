"""Energy- and constraint-conserving HBVM(k, s) integrators for Hamiltonian
systems with quadratic holonomic constraints."""

from .bench import BenchmarkProblem, PROBLEMS, get_problem
from .diagnostics import (
    ConvergenceTable,
    ErrorMetrics,
    compute_metrics,
    convergence_rates,
    convergence_study,
    reference_solution,
)
from .errors import HbvmError, StepFailureError
from .hbvm import SolverConfig, StepResult, Trajectory, fixed_point_step, propagate
from .model import ConstrainedHamiltonianSystem, State, check_consistency, exact_lambda
from .polybasis import HbvmTableau, LegendreBasis, build_tableau, butcher_matrix, gauss_rule

__version__ = "0.1.0"

__all__ = [
    "BenchmarkProblem",
    "ConstrainedHamiltonianSystem",
    "ConvergenceTable",
    "ErrorMetrics",
    "HbvmError",
    "HbvmTableau",
    "LegendreBasis",
    "PROBLEMS",
    "SolverConfig",
    "State",
    "StepFailureError",
    "StepResult",
    "Trajectory",
    "build_tableau",
    "butcher_matrix",
    "check_consistency",
    "compute_metrics",
    "convergence_rates",
    "convergence_study",
    "exact_lambda",
    "fixed_point_step",
    "gauss_rule",
    "get_problem",
    "propagate",
    "reference_solution",
    "__version__",
]
