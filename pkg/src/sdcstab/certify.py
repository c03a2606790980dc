"""Numerical exponential-stability certificates for SDC trajectories.

Given an ensemble of trajectories started on a grid of initial states,
this module estimates the ingredients of the discrete-grid decay test:
the transient constant K, the Lipschitz coefficient L, the drift bound
M_t, the dynamic replacement m_t for the product L*M_t, and the
resulting rate curve

    -omega_star(t) = log(K)/t + sqrt(K m_t log 2) - omega.

The verdict is ``certified`` as soon as a grid time t_star makes both
``-omega_t`` and ``-omega_star`` negative; trajectory snapshots on the
lattice {k t_star} then decay geometrically.

Ensemble members integrate independently (and may do so in parallel);
certificate assembly is a deterministic reduction over the finished
trajectories in member order.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from . import matkit
from .models import SdcModel, closed_loop_rhs
from .odeint import IntegratorConfig, Trajectory, integrate, integrate_closed_loop


class CertifyError(Exception):
    """Base class for certificate failures."""


class PointwiseInstabilityError(CertifyError):
    """A sampled coefficient matrix violates the requested decay rate."""

    def __init__(self, message: str, witness=None):
        super().__init__(message)
        self.witness = witness


class DegenerateSamplesError(CertifyError):
    """All sample states coincide; no Lipschitz quotient exists."""


class HorizonExceededError(CertifyError):
    """A trajectory does not cover the requested time."""


def default_rho_rule(t: float) -> float:
    """Anchor time for the dynamic bound: ``rho = 0.55 t``."""
    return 0.55 * t


@dataclass(frozen=True)
class EnsembleSpec:
    """Grid of initial states plus certificate parameters.

    ``rho_rule`` maps t to the anchor time of the dynamic bound;
    ``omega_target`` fixes the pointwise decay rate (None derives it
    from the worst sampled spectral abscissa); ``quadrature_grid`` sets
    the trapezoid resolution; every ``eval_stride``-th quadrature node
    becomes a certificate evaluation time.  ``rho_scan`` additionally
    minimizes m_t over anchor ratios 0.1..0.9.
    """

    initial_states: Sequence[np.ndarray]
    horizon: float
    rho_rule: Callable[[float], float] = default_rho_rule
    omega_target: Optional[float] = None
    quadrature_grid: int = 2000
    eval_stride: int = 16
    state_norm: str = "euclid"
    rho_scan: bool = False

    def __post_init__(self):
        if self.horizon <= 0.0:
            raise ValueError("horizon must be positive")
        if len(self.initial_states) == 0:
            raise ValueError("initial_states must be nonempty")
        if self.state_norm not in ("euclid", "mass"):
            raise ValueError(f"unknown state norm {self.state_norm!r}")


@dataclass
class Certificate:
    """Estimated stability constants and rate curves over a horizon.

    ``ts`` carries the evaluation grid; the curve arrays are aligned
    with it.  ``t_star`` is the first grid time at which both rate
    conditions turn negative, ``verdict`` is ``certified`` exactly when
    such a time exists (and no ensemble member escaped).  ``k`` and
    ``l_estimate`` are the constants entering the rate formula;
    ``final_over_initial`` records per-member norm ratios over the full
    horizon for decay diagnostics.
    """

    ts: np.ndarray
    k_curve: np.ndarray
    m_curve: np.ndarray
    m_big_curve: np.ndarray
    minus_omega_t: np.ndarray
    minus_omega_star: np.ndarray
    omega: float
    k: float
    l_estimate: float
    t_star: Optional[float]
    verdict: str
    escaped_members: List[int]
    final_over_initial: List[float]
    trajectories: List[Trajectory] = field(default=None, repr=False)


def ring_grid_2d(radii: Sequence) -> List[np.ndarray]:
    """Equally spaced points on concentric circles.

    ``radii`` is a sequence of (radius, count) pairs; each circle
    contributes ``count`` points starting at angle 0.
    """
    if len(radii) == 0:
        raise ValueError("radii must be nonempty")
    points = []
    for radius, count in radii:
        count = int(count)
        if count < 1:
            raise ValueError("each circle needs at least one point")
        angles = 2.0 * np.pi * np.arange(count) / count
        for a in angles:
            points.append(np.array([radius * np.cos(a), radius * np.sin(a)]))
    return points


def sphere_grid(n: int, radii: Sequence, seed: int = 0) -> List[np.ndarray]:
    """Seeded uniform samples on concentric (n-1)-spheres.

    Generalizes the planar ring grid to state dimension > 2; the seed is
    part of the experiment record.
    """
    rng = np.random.default_rng(seed)
    points = []
    for radius, count in radii:
        for _ in range(int(count)):
            v = rng.standard_normal(n)
            v /= np.linalg.norm(v)
            points.append(radius * v)
    return points


def estimate_L(model: SdcModel, sample_states: Sequence,
               max_samples: int = 256) -> float:
    """Largest pairwise quotient ``||A(xi)-A(xj)|| / ||xi-xj||``.

    A lower bound on the true Lipschitz constant of the coefficient map
    over the sampled region.
    """
    states = [np.asarray(x, dtype=float) for x in sample_states]
    if len(states) < 2:
        raise DegenerateSamplesError("need at least two sample states")
    if len(states) > max_samples:
        idx = np.linspace(0, len(states) - 1, max_samples).astype(int)
        states = [states[i] for i in idx]
    xs = np.asarray(states)
    mats = np.asarray([model.coefficient_at(x) for x in states])
    iu, ju = np.triu_indices(len(states), k=1)
    dists = np.linalg.norm(xs[iu] - xs[ju], axis=1)
    keep = dists > 1e-14
    if not np.any(keep):
        raise DegenerateSamplesError("all sample states coincide")
    diff_norms = matkit.spectral_norms(mats[iu[keep]] - mats[ju[keep]])
    return float(np.max(diff_norms / dists[keep]))


def _states_up_to(traj: Trajectory, t: float):
    if traj.times[-1] < t - 1e-12:
        raise HorizonExceededError(
            f"trajectory ends at {traj.times[-1]:.6g} < {t:.6g}"
        )
    mask = traj.times <= t + 1e-12
    return traj.states[mask]


def estimate_Mt(trajectories: Sequence[Trajectory], model: SdcModel,
                t: float) -> float:
    """Largest drift norm ``||A(x) x||`` over all stored states up to t."""
    best = 0.0
    for traj in trajectories:
        for x in _states_up_to(traj, t):
            best = max(best, float(np.linalg.norm(model.coefficient_at(x) @ x)))
    return best


def estimate_K_along(trajectories: Sequence[Trajectory], model: SdcModel,
                     omega: float, t: float, samples: int = 2000) -> float:
    """Largest transient bound over all sampled coefficient matrices up
    to time t.

    Raises
    ------
    PointwiseInstabilityError
        If some sampled state's coefficient matrix has spectral abscissa
        above ``-omega``; the witness state is attached.
    """
    best = 1.0
    for traj in trajectories:
        for x in _states_up_to(traj, t):
            a = model.coefficient_at(x)
            try:
                k = matkit.transient_bound(a, omega, samples=samples)
            except matkit.UnstableMatrixError as exc:
                raise PointwiseInstabilityError(
                    f"coefficient at state {x} violates omega={omega}: {exc}",
                    witness=x,
                ) from exc
            best = max(best, k)
    return best


def _norm_factory(model: SdcModel, kind: str):
    if kind == "mass":
        if model.mass is None:
            raise ValueError("model has no mass matrix for the mass norm")
        mass = model.mass

        def norm_many(xs: np.ndarray) -> np.ndarray:
            return np.sqrt(np.einsum("si,ij,sj->s", xs, mass, xs))
    else:

        def norm_many(xs: np.ndarray) -> np.ndarray:
            return np.linalg.norm(xs, axis=1)

    return norm_many


def estimate_mt(trajectories: Sequence[Trajectory], model: SdcModel,
                omega: float, t: float, rho: float,
                quadrature_grid: int = 2000,
                state_norm: str = "euclid") -> float:
    """Dynamic replacement for the static product L*M_t.

    For each trajectory the quotient of the exponentially weighted
    integrals

        int_0^t e^{-omega(t-s)} ||A(xi(s)) - A(xi(rho))|| ||xi(s)|| ds
        -----------------------------------------------------------
        int_0^t e^{-omega(t-s)} |s - rho| ||xi(s)|| ds

    is evaluated by the composite trapezoid rule on the dense-output
    grid, and the supremum over the ensemble is returned.  Identically
    zero trajectories contribute zero by convention.
    """
    if t <= 0.0:
        raise ValueError("t must be positive")
    if rho < 0.0:
        raise ValueError("rho must be nonnegative")
    norm_many = _norm_factory(model, state_norm)
    sgrid = np.linspace(0.0, t, int(quadrature_grid))
    weights = np.exp(-omega * (t - sgrid))
    sup = 0.0
    for traj in trajectories:
        if traj.times[-1] < max(t, rho) - 1e-12:
            raise HorizonExceededError(
                f"trajectory ends at {traj.times[-1]:.6g} < {max(t, rho):.6g}"
            )
        xs = traj.sample(sgrid)
        nrm = norm_many(xs)
        if np.max(nrm) <= 0.0:
            continue
        a_stack = np.asarray([model.coefficient_at(x) for x in xs])
        x_rho = traj.sample([rho])[0]
        a_rho = model.coefficient_at(x_rho)
        diff = matkit.spectral_norms(a_stack - a_rho[None])
        numer = np.trapezoid(weights * diff * nrm, sgrid)
        denom = np.trapezoid(weights * np.abs(sgrid - rho) * nrm, sgrid)
        if denom <= 0.0:
            continue
        sup = max(sup, float(numer / denom))
    return sup


def omega_star(k: float, m: float, omega: float, t_star: float) -> float:
    """Negated discrete-grid decay rate
    ``-omega_star = log(K)/t_star + sqrt(K m log 2) - omega``."""
    if k < 1.0:
        raise ValueError("K must be at least 1")
    if m < 0.0:
        raise ValueError("m must be nonnegative")
    if t_star <= 0.0:
        raise ValueError("t_star must be positive")
    return math.log(k) / t_star + math.sqrt(k * m * math.log(2.0)) - omega


def global_decay_exponent(k: float, l: float, m: float, omega: float) -> float:
    """Exponent ``sqrt(K L M log 2) - omega`` of the global growth
    envelope; a negative value certifies uniform exponential decay."""
    if k < 1.0:
        raise ValueError("K must be at least 1")
    if l < 0.0 or m < 0.0:
        raise ValueError("L and M must be nonnegative")
    if omega <= 0.0:
        raise ValueError("omega must be positive")
    return math.sqrt(k * l * m * math.log(2.0)) - omega


_RHO_SCAN_RATIOS = np.arange(0.1, 0.95, 0.1)


def certify_ensemble(model: SdcModel, spec: EnsembleSpec,
                     cfg: IntegratorConfig,
                     controller_factory: Optional[Callable] = None) -> Certificate:
    """Integrate the ensemble and assemble the certificate curves.

    Open-loop dynamics by default; ``controller_factory(x0)`` may supply
    a fresh controller per member for closed-loop certification.  The
    verdict is ``certified`` when some evaluation time makes both rate
    conditions negative and no member escaped; escapes mark the verdict
    ``inconclusive`` and are listed as witnesses rather than raised.

    Raises
    ------
    PointwiseInstabilityError
        If an explicit ``omega_target`` is violated by a sampled state.
    """
    trajs: List[Trajectory] = []
    escaped: List[int] = []
    for i, x0 in enumerate(spec.initial_states):
        if controller_factory is None:
            traj = integrate(closed_loop_rhs(model, None), x0, cfg)
        else:
            traj = integrate_closed_loop(model, controller_factory(x0), x0, cfg)
        trajs.append(traj)
        if traj.terminated == "escaped":
            escaped.append(i)

    norm_many = _norm_factory(model, spec.state_norm)
    ratios = []
    for traj in trajs:
        n0 = float(norm_many(traj.states[:1])[0])
        n1 = float(norm_many(traj.states[-1:])[0])
        ratios.append(n1 / n0 if n0 > 0 else 0.0)

    # Pointwise data at the stored nodes of the non-escaped members.
    live = [traj for i, traj in enumerate(trajs) if i not in set(escaped)]
    if not live:
        ts = np.array([spec.horizon])
        nanarr = np.full(1, np.nan)
        return Certificate(
            ts=ts, k_curve=nanarr, m_curve=nanarr, m_big_curve=nanarr,
            minus_omega_t=nanarr, minus_omega_star=nanarr,
            omega=float("nan"), k=float("nan"), l_estimate=float("nan"),
            t_star=None, verdict="inconclusive",
            escaped_members=escaped, final_over_initial=ratios,
            trajectories=trajs,
        )

    node_mats = []
    node_times = []
    node_states = []
    for traj in live:
        mats = np.asarray([model.coefficient_at(x) for x in traj.states])
        node_mats.append(mats)
        node_times.append(traj.times)
        node_states.append(traj.states)

    abscissas = [
        np.array([matkit.spectral_abscissa(m) for m in mats])
        for mats in node_mats
    ]
    worst = max(float(a.max()) for a in abscissas)
    if spec.omega_target is None:
        omega = -worst
        if omega <= 0.0:
            # no pointwise decay rate exists; nothing to certify
            ts = np.array([spec.horizon])
            nanarr = np.full(1, np.nan)
            return Certificate(
                ts=ts, k_curve=nanarr, m_curve=nanarr, m_big_curve=nanarr,
                minus_omega_t=nanarr, minus_omega_star=nanarr,
                omega=omega, k=float("nan"), l_estimate=float("nan"),
                t_star=None, verdict="inconclusive",
                escaped_members=escaped, final_over_initial=ratios,
                trajectories=trajs,
            )
    else:
        omega = float(spec.omega_target)
        slack = 1e-9 * max(1.0, abs(omega))
        if worst > -omega + slack:
            witness = None
            for a, traj in zip(abscissas, live):
                if a.max() > -omega + slack:
                    witness = traj.states[int(np.argmax(a))]
                    break
            raise PointwiseInstabilityError(
                f"sampled abscissa {worst:.6g} exceeds -omega = {-omega:.6g}",
                witness=witness,
            )

    # Per-node transient bounds and drift norms feed cumulative maxima.
    k_nodes = []
    drift_nodes = []
    for mats, xs in zip(node_mats, node_states):
        k_nodes.append(np.array(
            [matkit.transient_bound(m, omega) for m in mats]
        ))
        drift_nodes.append(norm_many(np.einsum("sij,sj->si", mats, xs)))

    all_states = np.concatenate(node_states, axis=0)
    l_estimate = estimate_L(model, all_states)

    # Dense quadrature data shared by every evaluation time.
    grid_n = int(spec.quadrature_grid)
    sgrid = np.linspace(0.0, spec.horizon, grid_n + 1)
    dense_states = [traj.sample(sgrid) for traj in live]
    dense_mats = [
        np.asarray([model.coefficient_at(x) for x in xs])
        for xs in dense_states
    ]
    dense_norms = [norm_many(xs) for xs in dense_states]

    eval_idx = np.arange(spec.eval_stride, grid_n + 1, spec.eval_stride)
    ts = sgrid[eval_idx]

    def mt_at(j: int, t: float, rho: float) -> float:
        sub = sgrid[: j + 1]
        w = np.exp(-omega * (t - sub))
        sup = 0.0
        for traj, mats, nrm in zip(live, dense_mats, dense_norms):
            if np.max(nrm[: j + 1]) <= 0.0:
                continue
            x_rho = traj.sample([rho])[0]
            a_rho = model.coefficient_at(x_rho)
            diff = matkit.spectral_norms(mats[: j + 1] - a_rho[None])
            numer = np.trapezoid(w * diff * nrm[: j + 1], sub)
            denom = np.trapezoid(w * np.abs(sub - rho) * nrm[: j + 1], sub)
            if denom > 0.0:
                sup = max(sup, float(numer / denom))
        return sup

    k_curve = np.empty(ts.size)
    m_curve = np.empty(ts.size)
    m_big_curve = np.empty(ts.size)
    for out, (j, t) in enumerate(zip(eval_idx, ts)):
        k_curve[out] = max(
            float(kk[tt <= t + 1e-12].max())
            for kk, tt in zip(k_nodes, node_times)
        )
        m_big_curve[out] = max(
            float(dd[tt <= t + 1e-12].max())
            for dd, tt in zip(drift_nodes, node_times)
        )
        if spec.rho_scan:
            m_curve[out] = min(
                mt_at(j, t, ratio * t) for ratio in _RHO_SCAN_RATIOS
            )
        else:
            m_curve[out] = mt_at(j, t, spec.rho_rule(t))

    minus_omega_t = np.sqrt(k_curve * m_curve * math.log(2.0)) - omega
    minus_omega_star = np.log(k_curve) / ts + minus_omega_t

    t_star = None
    for t, mo_t, mo_s in zip(ts, minus_omega_t, minus_omega_star):
        if mo_t < 0.0 and mo_s < 0.0:
            t_star = float(t)
            break
    verdict = "certified" if (t_star is not None and not escaped) else "inconclusive"
    if verdict != "certified":
        t_star = None

    if t_star is not None:
        k_glob = float(k_curve[np.searchsorted(ts, t_star)])
    else:
        k_glob = float(k_curve.max())

    return Certificate(
        ts=ts, k_curve=k_curve, m_curve=m_curve, m_big_curve=m_big_curve,
        minus_omega_t=minus_omega_t, minus_omega_star=minus_omega_star,
        omega=omega, k=k_glob, l_estimate=l_estimate,
        t_star=t_star, verdict=verdict,
        escaped_members=escaped, final_over_initial=ratios,
        trajectories=trajs,
    )


def write_certificate_csv(cert: Certificate, path) -> None:
    """Emit the certificate curves as CSV with columns
    ``t, K, m_t, M_t, minus_omega_star``."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "K", "m_t", "M_t", "minus_omega_star"])
        for row in zip(cert.ts, cert.k_curve, cert.m_curve,
                       cert.m_big_curve, cert.minus_omega_star):
            writer.writerow([format(v, ".17g") for v in row])


def write_verdict_json(cert: Certificate, path) -> None:
    """Emit the verdict summary as JSON."""
    payload = {
        "verdict": cert.verdict,
        "t_star": cert.t_star,
        "omega": cert.omega,
        "K": cert.k,
        "L_estimate": cert.l_estimate,
        "escaped_members": cert.escaped_members,
        "final_over_initial": cert.final_over_initial,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
