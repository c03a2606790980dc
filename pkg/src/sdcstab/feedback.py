"""Riccati-based feedback controllers for SDC plants.

Two gain laws are provided: plain state-dependent Riccati feedback
(``sdre``), which solves a fresh Riccati equation at every requested
state, and the update scheme (``p-update``), which freezes a base
Riccati solution P and tracks coefficient changes through a Sylvester
equation.  The update E satisfies

    (A(x_base) + A_delta) E - E Z = -A_delta + B R_delta B^T P,

with Z the frozen closed-loop matrix, and the served gain is
``R^{-1} B^T P (I + E)^{-1}`` as long as ``||E|| < epsilon``; once the
threshold is crossed the base is reset to a fresh Riccati solution at
the current state.  While ``||E|| < 1`` the updated closed loop is
similar to Z through I+E, so its transient constant degrades by at most
``(1 + ||E||) / (1 - ||E||)``.

A ControllerState is owned by a single integration run; distinct runs
must use distinct states.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import matkit
from .matkit import SchurForm, SpectraOverlapError
from .models import SdcModel


class FeedbackError(Exception):
    """Base class for controller failures."""


class SylvesterFailureError(FeedbackError):
    """Both the exact and the perturbed update equations failed."""


class SingularUpdateError(FeedbackError):
    """An update with ||E|| >= 1 cannot be inverted through I + E."""


_MODES = ("sdre", "p-update")


@dataclass
class ControllerState:
    """Mutable feedback configuration owned by one integration run.

    Carries the base point and its Riccati solution ``p``, the frozen
    closed loop ``z`` (with a cached Schur factorization reused by every
    update solve), the current update ``e``, and the reset threshold
    ``epsilon``.  ``k_base``/``omega_base`` are the transient constant
    and decay rate certified for ``z`` at the last (re)initialization.
    """

    mode: str
    epsilon: Optional[float]
    q: np.ndarray
    r: np.ndarray
    r_inv: np.ndarray
    r_delta: np.ndarray
    base_state: np.ndarray
    a_base: np.ndarray
    p: np.ndarray
    z: np.ndarray
    e: np.ndarray
    k_base: float
    omega_base: float
    switch_count: int = 0
    perturbed_fallback_used: bool = False
    norm_kind: str = "spectral"
    transient_samples: int = 800
    z_schur: SchurForm = field(default=None, repr=False)
    z_neg_schur: SchurForm = field(default=None, repr=False)


@dataclass(frozen=True)
class GainReport:
    """One served gain with its certificate bookkeeping.

    ``k_tilde`` is ``(1 + ||E||) / (1 - ||E||) * k_base`` for update-mode
    gains and None for plain Riccati gains; ``omega`` is the decay rate
    of the current base closed loop.
    """

    f: np.ndarray
    k_tilde: Optional[float]
    omega: float
    used_perturbed_solve: bool
    norm_e: float


def _update_norm(e: np.ndarray, kind: str) -> float:
    if kind == "frobenius":
        return matkit.frobenius_norm(e)
    return matkit.operator_norm(e)


def _negated_schur(s: SchurForm) -> SchurForm:
    """Schur form of ``-A`` from the Schur form of ``A``.

    Negating a quasi-triangular matrix stays quasi-triangular, so the
    factorization can be reused without another reduction.
    """
    return SchurForm(q=s.q, t=-s.t, eigenvalues=-s.eigenvalues)


def _rebase(state: ControllerState, model: SdcModel, x: np.ndarray) -> None:
    """Solve the Riccati equation at ``x`` and make it the new base."""
    a = model.coefficient_at(x)
    sol = matkit.solve_care(a, model.b, state.q, state.r)
    state.base_state = np.array(x, dtype=float)
    state.a_base = a
    state.p = sol.p
    state.z = sol.closed_loop
    state.e = np.zeros_like(sol.closed_loop)
    state.omega_base = abs(matkit.spectral_abscissa(sol.closed_loop)) * (1.0 - 1e-3)
    state.k_base = matkit.transient_bound(
        sol.closed_loop, state.omega_base, samples=state.transient_samples
    )
    state.z_schur = matkit.real_schur(sol.closed_loop)
    state.z_neg_schur = _negated_schur(state.z_schur)


def init_controller(model: SdcModel, x0, q, r, epsilon: Optional[float],
                    mode: str = "p-update",
                    norm_kind: str = "spectral",
                    transient_samples: int = 800) -> ControllerState:
    """Create a controller anchored at ``x0``.

    Solves the Riccati equation for ``(A(x0), B, Q, R)`` and stores the
    base solution, the frozen closed loop, and a zero update.  For
    ``p-update`` mode the reset threshold must satisfy
    ``0 < epsilon < 1``; plain Riccati feedback must be requested
    explicitly with ``mode='sdre'`` (``epsilon=0`` is rejected rather
    than silently degenerating).
    """
    if mode not in _MODES:
        raise ValueError(f"mode must be one of {_MODES}, got {mode!r}")
    if mode == "p-update":
        if epsilon is None or not 0.0 < epsilon < 1.0:
            raise ValueError(
                f"p-update requires 0 < epsilon < 1, got {epsilon!r}"
            )
    if norm_kind not in ("spectral", "frobenius"):
        raise ValueError(f"unknown norm kind {norm_kind!r}")
    x0 = np.asarray(x0, dtype=float)
    q = matkit.as_square(q, "Q")
    r = matkit.as_square(r, "R")
    state = ControllerState(
        mode=mode,
        epsilon=float(epsilon) if epsilon is not None else None,
        q=q,
        r=r,
        r_inv=np.linalg.inv(r),
        r_delta=np.zeros_like(r),
        base_state=x0,
        a_base=np.zeros((model.n, model.n)),
        p=np.zeros((model.n, model.n)),
        z=np.zeros((model.n, model.n)),
        e=np.zeros((model.n, model.n)),
        k_base=1.0,
        omega_base=0.0,
        norm_kind=norm_kind,
        transient_samples=transient_samples,
    )
    _rebase(state, model, x0)
    return state


def base_gain(state: ControllerState, model: SdcModel) -> np.ndarray:
    """Gain served at the base point itself: ``R^{-1} B^T P``."""
    return state.r_inv @ model.b.T @ state.p


def sdre_gain(model: SdcModel, x, q, r) -> GainReport:
    """Plain Riccati gain ``F = R^{-1} B^T P(x)`` from a fresh solve at x."""
    a = model.coefficient_at(np.asarray(x, dtype=float))
    q = matkit.as_square(q, "Q")
    r = matkit.as_square(r, "R")
    sol = matkit.solve_care(a, model.b, q, r)
    f = np.linalg.solve(r, model.b.T @ sol.p)
    omega = abs(matkit.spectral_abscissa(sol.closed_loop))
    return GainReport(f=f, k_tilde=None, omega=omega,
                      used_perturbed_solve=False, norm_e=0.0)


def _solve_update(state: ControllerState, model: SdcModel,
                  a_now: np.ndarray, a_delta: np.ndarray):
    """Update matrix E for the current coefficient change.

    The exact equation pairs ``A(x)`` with the frozen Z; when their
    spectra collide, the perturbed layout closes the loop on the left
    operand and flips the sign of the Z term, which keeps the two
    spectra on opposite sides of the imaginary axis and restores unique
    solvability.
    """
    rhs = -a_delta
    if np.any(state.r_delta):
        rhs = rhs + model.b @ state.r_delta @ model.b.T @ state.p
    try:
        e = matkit.solve_sylvester(a_now, state.z, rhs,
                                   a2_schur=state.z_schur)
        return e, False
    except SpectraOverlapError:
        pass
    a_pert = a_now - model.b @ state.r_inv @ model.b.T @ state.p
    try:
        e = matkit.solve_sylvester(a_pert, -state.z, rhs,
                                   a2_schur=state.z_neg_schur)
    except SpectraOverlapError as exc:
        raise SylvesterFailureError(
            f"exact and perturbed update solves both failed: {exc}"
        ) from exc
    return e, True


def update_gain(state: ControllerState, model: SdcModel, x):
    """Serve a gain for state ``x`` by updating the frozen base solution.

    Computes ``A_delta = A(x) - A(x_base)``, solves the update equation
    for E, and returns ``R^{-1} B^T P (I + E)^{-1}`` while
    ``||E|| < epsilon``.  Crossing the threshold triggers a reset: the
    Riccati equation is re-solved at ``x``, the switch counter is
    incremented, and the fresh base gain is returned.  The state is
    mutated in place and also returned.
    """
    if state.mode != "p-update":
        raise ValueError("update_gain requires a p-update controller")
    x = np.asarray(x, dtype=float)
    a_now = model.coefficient_at(x)
    a_delta = a_now - state.a_base
    e, perturbed = _solve_update(state, model, a_now, a_delta)
    if perturbed:
        state.perturbed_fallback_used = True
    norm_e = _update_norm(e, state.norm_kind)

    if norm_e < state.epsilon:
        state.e = e
        ident = np.eye(model.n)
        p_eff = np.linalg.solve((ident + e).T, state.p.T).T
        f = state.r_inv @ model.b.T @ p_eff
        k_tilde = (1.0 + norm_e) / (1.0 - norm_e) * state.k_base
        report = GainReport(f=f, k_tilde=k_tilde, omega=state.omega_base,
                            used_perturbed_solve=perturbed, norm_e=norm_e)
        return report, state

    _rebase(state, model, x)
    state.switch_count += 1
    f = base_gain(state, model)
    report = GainReport(f=f, k_tilde=state.k_base, omega=state.omega_base,
                        used_perturbed_solve=perturbed, norm_e=0.0)
    return report, state


def qdelta_of(state: ControllerState, a_delta, e) -> np.ndarray:
    """Implied cost perturbation ``Q_delta = (-Q E - A_delta^T P)(I+E)^{-1}``.

    Diagnostic only: substituting it back completes the block
    invariant-subspace relation for the updated data.
    """
    a_delta = matkit.as_square(a_delta, "A_delta")
    e = matkit.as_square(e, "E")
    if matkit.operator_norm(e) >= 1.0:
        raise SingularUpdateError("||E|| >= 1; I + E may be singular")
    n = e.shape[0]
    rhs = -state.q @ e - a_delta.T @ state.p
    return np.linalg.solve((np.eye(n) + e).T, rhs.T).T


def verify_class_membership(acl, k: float, omega: float, tau_grid) -> bool:
    """Check ``||exp(A tau)|| <= K exp(-omega tau)`` on a grid.

    Allows a relative slack of 1e-6 per point.
    """
    if k < 1.0:
        raise ValueError("K must be at least 1")
    if omega <= 0.0:
        raise ValueError("omega must be positive")
    taus = np.asarray(tau_grid, dtype=float).ravel()
    norms = matkit.spectral_norms(matkit.expm_on_grid(acl, taus))
    bound = k * np.exp(-omega * taus) * (1.0 + 1e-6)
    return bool(np.all(norms <= bound))
