"""Numerical laboratory for a regularized conical Kahler-Ricci flow on the
rotation-invariant sphere.

The whole problem is reduced to one real variable s = log|z|^2.  A closed
invariant (1,1)-current sqrt(-1) dd-bar F corresponds to the *s-density*
F''(s), and integrals over the surface reduce to 2*pi * integral(density * f ds).
All modules speak this density language:

geometry        exact background data (reference potential, divisor
                potentials, vector-field Hamiltonian, Ricci potential)
regularization  epsilon-smoothing of the divisor terms (chi potentials,
                smoothed metric/current, twisted Ricci potential)
flow            time integration of the scalar Monge-Ampere flow
diagnostics     every monitorable a-priori-estimate quantity
continuation    the epsilon -> 0 program (sweeps, Cauchy certificates)
cli             operator surface and stable on-disk outputs
"""

__version__ = "0.1.0"

from .geometry import (
    BackgroundGeometry,
    ConeData,
    RadialGrid,
    VectorFieldData,
    build_background,
    build_fubini_study,
    check_X_logsD_bound,
    divisor_potentials,
    gamma,
    theta_potential,
)
from .regularization import (
    RegularizedBackground,
    build_psi_aux,
    build_regularized_background,
    chi_derivatives,
    chi_eval,
    select_k,
)
from .flow import (
    FlowConfig,
    FlowState,
    rhs_eval,
    run,
    stationary_solve,
    step,
)
from .diagnostics import (
    DiagnosticsRecord,
    calabi_S,
    compute_record,
    cone_exponent_fit,
    curvature_max,
    holder_seminorm,
    soliton_residual,
    sup_bounds,
    trace_ratios,
    weak_residual,
    x_phi_sup,
)
from .continuation import ContinuationReport, extract_limit, run_sequence

__all__ = [
    "BackgroundGeometry",
    "ConeData",
    "ContinuationReport",
    "DiagnosticsRecord",
    "FlowConfig",
    "FlowState",
    "RadialGrid",
    "RegularizedBackground",
    "VectorFieldData",
    "build_background",
    "build_fubini_study",
    "build_psi_aux",
    "build_regularized_background",
    "calabi_S",
    "check_X_logsD_bound",
    "chi_derivatives",
    "chi_eval",
    "compute_record",
    "cone_exponent_fit",
    "curvature_max",
    "divisor_potentials",
    "extract_limit",
    "gamma",
    "holder_seminorm",
    "rhs_eval",
    "run",
    "run_sequence",
    "select_k",
    "soliton_residual",
    "stationary_solve",
    "step",
    "sup_bounds",
    "theta_potential",
    "trace_ratios",
    "weak_residual",
    "x_phi_sup",
]
