"""Balanced truncation for quadratic-bilinear control systems."""

from .balancing import (
    BalancingTransform,
    ReducedModel,
    balance_and_reduce,
    balancing_transform,
    hankel_values,
    stability_radius,
)
from .core import (
    HessianTensor,
    LowRankFactor,
    QBSystem,
    apply_quadratic,
    gamma_product,
    make_system,
    mode_products,
    mode_unfold,
    quadratic_jacobian,
    refold,
    shift_A,
    symmetrize,
)
from .errors import (
    ConvergenceError,
    DimensionError,
    DivergenceError,
    DomainError,
    FormatError,
    NumericalError,
    QBMORError,
    StabilityError,
)
from .gramians import (
    ConvergenceReport,
    GramianPair,
    convergence_report,
    fixed_point_limit,
    gramian_residual,
    iterate_gramians,
    truncated_gramians,
    volterra_gramian_oracle,
)
from .lyapunov import decay_bound, factorize_psd, solve_lyapunov, truncate_factor
from .mmio import load_system, read_matrix, save_system, write_matrix
from .models import (
    ModelSpec,
    ScalarExample,
    build_model,
    chafee_infante,
    fitzhugh_nagumo,
    manifold_defect,
    rc_ladder,
    scalar_energy_functionals,
    scalar_gramians,
    scalar_system,
)
from .simulate import InputSignal, Trajectory, compare_outputs, integrate, lyapunov_certificate, qb_rhs

__version__ = "0.1.0"

__all__ = [
    "apply_quadratic",
    "balance_and_reduce",
    "balancing_transform",
    "BalancingTransform",
    "build_model",
    "chafee_infante",
    "compare_outputs",
    "convergence_report",
    "ConvergenceError",
    "ConvergenceReport",
    "decay_bound",
    "DimensionError",
    "DivergenceError",
    "DomainError",
    "factorize_psd",
    "fitzhugh_nagumo",
    "fixed_point_limit",
    "FormatError",
    "gamma_product",
    "gramian_residual",
    "GramianPair",
    "hankel_values",
    "HessianTensor",
    "InputSignal",
    "integrate",
    "iterate_gramians",
    "load_system",
    "LowRankFactor",
    "lyapunov_certificate",
    "make_system",
    "manifold_defect",
    "mode_products",
    "mode_unfold",
    "ModelSpec",
    "NumericalError",
    "qb_rhs",
    "QBMORError",
    "QBSystem",
    "quadratic_jacobian",
    "rc_ladder",
    "read_matrix",
    "ReducedModel",
    "refold",
    "save_system",
    "scalar_energy_functionals",
    "scalar_gramians",
    "scalar_system",
    "ScalarExample",
    "shift_A",
    "solve_lyapunov",
    "stability_radius",
    "StabilityError",
    "symmetrize",
    "Trajectory",
    "truncate_factor",
    "truncated_gramians",
    "volterra_gramian_oracle",
    "write_matrix",
    "__version__",
]
