"""Hamilton-Jacobi equations through a fully discrete Lax-Oleinik semigroup.

The scheme's one-step operator is a (min,plus)-convolution with a convex
kernel, evaluated in time linear in the grid size per convex/concave block
of the solution.
"""

__version__ = "0.1.0"

from .grid import EvaluationError, GridFn, InvalidInput, NonFiniteError
from .hamiltonian import HamiltonianSpec, Mechanical, Potential, Tabulated, Term
from .minplus import (
    Block,
    BlockDecomposition,
    BlockKind,
    OpCounter,
    conv_convex_concave,
    conv_convex_convex,
    conv_fast,
    conv_naive,
    decompose,
    min_pointwise,
)
from .scheme import (
    EvolutionTrace,
    Kernel,
    SchemeParams,
    build_kernel,
    evolve,
    split_step_nd,
    step_fully_discrete,
    step_semidiscrete,
)
from .weakkam import (
    EffectiveHEstimate,
    Method,
    MinPlusMatrix,
    build_period_matrix,
    detect_eventual_periodicity,
    eigenvalue_karp,
    eigenvector,
    estimate_hbar_drift,
    estimate_hbar_matrix,
    fixed_point_residual,
)

__all__ = [name for name in dir() if not name.startswith("_")]
