"""Stabilization of state-dependent-coefficient systems.

Riccati-based feedback with Sylvester-equation gain updates, adaptive
closed-loop integration, and numerical exponential-stability
certificates, plus the built-in benchmark plants and a batch CLI.
"""

from .matkit import (
    CareSolution,
    SchurForm,
    frobenius_norm,
    matrix_exponential,
    operator_norm,
    order_schur,
    real_schur,
    separation,
    solve_care,
    solve_sylvester,
    spectral_abscissa,
    transient_bound,
)
from .models import (
    FemDiscretization,
    SdcModel,
    assemble_fem,
    banks5d_model,
    chaffee_infante_model,
    chaffee_initial_state,
    closed_loop_rhs,
    oscillator_model,
)
from .feedback import (
    ControllerState,
    GainReport,
    init_controller,
    qdelta_of,
    sdre_gain,
    update_gain,
    verify_class_membership,
)
from .odeint import (
    IntegratorConfig,
    Trajectory,
    integrate,
    integrate_closed_loop,
    mass_weighted_tolerances,
)
from .certify import (
    Certificate,
    EnsembleSpec,
    certify_ensemble,
    estimate_K_along,
    estimate_L,
    estimate_Mt,
    estimate_mt,
    global_decay_exponent,
    omega_star,
    ring_grid_2d,
    sphere_grid,
)
from .modelfile import load_model_file

__version__ = "0.1.0"

__all__ = [
    "CareSolution", "SchurForm", "frobenius_norm", "matrix_exponential",
    "operator_norm", "order_schur", "real_schur", "separation",
    "solve_care", "solve_sylvester", "spectral_abscissa", "transient_bound",
    "FemDiscretization", "SdcModel", "assemble_fem", "banks5d_model",
    "chaffee_infante_model", "chaffee_initial_state", "closed_loop_rhs",
    "oscillator_model",
    "ControllerState", "GainReport", "init_controller", "qdelta_of",
    "sdre_gain", "update_gain", "verify_class_membership",
    "IntegratorConfig", "Trajectory", "integrate", "integrate_closed_loop",
    "mass_weighted_tolerances",
    "Certificate", "EnsembleSpec", "certify_ensemble", "estimate_K_along",
    "estimate_L", "estimate_Mt", "estimate_mt", "global_decay_exponent",
    "omega_star", "ring_grid_2d", "sphere_grid",
    "load_model_file",
    "__version__",
]
