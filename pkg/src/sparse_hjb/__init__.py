"""Sparse (L0) stochastic optimal control via the HJB equation.

Modules:

* :mod:`core_model` - control-affine systems, penalties, closed-form Hamiltonians
* :mod:`hjb_solver` - explicit monotone finite-difference solver and diagnostics
* :mod:`feedback_synthesis` - bang-off-bang feedback and switching boundaries
* :mod:`sde_lab` - Euler-Maruyama simulation, Monte Carlo and baselines
* :mod:`cli` - configuration-driven experiments
"""

from .core_model import (
    BoxControlSet,
    ControlAffineSystem,
    HamiltonianArgs,
    Penalty,
    ProblemSpec,
    G_value,
    hamiltonian,
    hamiltonian_bruteforce,
)
from .errors import (
    ConfigurationError,
    DivergenceError,
    DomainError,
    HorizonTooLongError,
    InfeasibleResolutionError,
    SparseHJBError,
    UnsupportedError,
)
from .feedback_synthesis import FeedbackMap, extract_boundary, feedback, switching_value
from .hjb_solver import SolverConfig, SpatialGrid, ValueField, gradient_at, hjb_residual, read_field, solve_backward, write_field
from .sde_lab import SimulationReport, monte_carlo, riccati_baseline, simulate

__version__ = "0.1.0"
