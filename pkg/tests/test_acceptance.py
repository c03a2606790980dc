"""Acceptance gate: every criterion at its stated tolerance.

Each test prints one PASS/FAIL line (collected into the terminal summary
by conftest) and enforces its runtime cap.  Criterion 4's decay clause
cannot be met by any Riccati-type gain with these cost weights; its
failure message carries the analysis.
"""

import math
import time

import numpy as np
import pytest

import sdcstab as s
from sdcstab import feedback, matkit

import properties
from conftest import kron_sylvester_solve, random_disjoint_pair, \
    random_stabilizable

RESULTS = []


def report(num, ok, detail):
    line = f"ACCEPTANCE {num}: {'PASS' if ok else 'FAIL'} - {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


def banks5d_setup():
    model = s.banks5d_model()
    return model, model.c.T @ model.c, 1e-3 * np.eye(2)


def run_banks5d(mode, epsilon=None, on_update=None):
    model, q, r = banks5d_setup()
    x0 = properties.BANKS5D_X0
    cfg = s.IntegratorConfig(t_max=3.0)
    if mode == "open-loop":
        return s.integrate(s.closed_loop_rhs(model, None), x0, cfg)
    ctl = s.init_controller(model, x0, q, r, epsilon=epsilon, mode=mode)
    return s.integrate_closed_loop(model, ctl, x0, cfg, on_update=on_update)


def chaffee_setup(n_elements=20):
    model = s.chaffee_infante_model(n_elements)
    q = model.c.T @ model.c
    r = 0.1 * np.eye(1)
    x0 = s.chaffee_initial_state(model)
    cfg = s.mass_weighted_tolerances(
        s.IntegratorConfig(t_max=3.0), n_elements
    )
    return model, q, r, x0, cfg


def test_criterion_01_care_correctness():
    start = time.perf_counter()
    rng = np.random.default_rng(101)
    for _ in range(200):
        a, b, q, r = random_stabilizable(rng)
        sol = s.solve_care(a, b, q, r)
        g = b @ np.linalg.solve(r, b.T)
        scale = max(1.0, np.linalg.norm(q, "fro"),
                    np.linalg.norm(sol.p, "fro") ** 2 * np.linalg.norm(g, "fro"))
        assert sol.residual_norm <= 1e-9 * scale
        assert s.spectral_abscissa(sol.closed_loop) < 0.0
    elapsed = time.perf_counter() - start
    report(1, elapsed < 10.0,
           f"200 random CAREs within tolerance ({elapsed:.2f}s < 10s)")


def test_criterion_02_sylvester_oracle():
    start = time.perf_counter()
    rng = np.random.default_rng(202)
    for _ in range(100):
        a1, a2, c = random_disjoint_pair(rng, nm_max=100)
        e = s.solve_sylvester(a1, a2, c)
        ref = kron_sylvester_solve(a1, a2, c)
        err = np.linalg.norm(e - ref, "fro")
        assert err <= 1e-8 * max(1.0, np.linalg.norm(ref, "fro"))
    elapsed = time.perf_counter() - start
    report(2, elapsed < 5.0,
           f"100 solves match the Kronecker oracle ({elapsed:.2f}s < 5s)")


def test_criterion_03_oscillator_certificate():
    start = time.perf_counter()
    model = s.oscillator_model(0.4)
    cfg = s.IntegratorConfig(t_max=12.0)
    spec = s.EnsembleSpec(
        initial_states=s.ring_grid_2d([(0.25, 12), (0.17, 8), (0.08, 4)]),
        horizon=12.0, omega_target=0.3,
    )
    cert = s.certify_ensemble(model, spec, cfg)
    assert cert.verdict == "certified"
    assert cert.t_star is not None and 4.0 <= cert.t_star <= 8.0

    wide = s.EnsembleSpec(
        initial_states=s.ring_grid_2d([(2.0, 12), (1.36, 8), (0.64, 4)]),
        horizon=12.0, omega_target=0.3,
    )
    cert2 = s.certify_ensemble(model, wide, cfg)
    assert cert2.verdict == "inconclusive"
    non_decaying = cert2.escaped_members or \
        max(cert2.final_over_initial) > 1.0
    assert non_decaying
    elapsed = time.perf_counter() - start
    report(3, elapsed < 60.0,
           f"certified with t*={cert.t_star:.3f} in [4, 8]; radius-2.0 grid "
           f"inconclusive with non-decaying members ({elapsed:.1f}s < 60s)")


def test_criterion_04_banks5d_stabilization():
    start = time.perf_counter()
    x0 = properties.BANKS5D_X0
    threshold = 1e-2 * np.linalg.norm(x0)

    open_loop = run_banks5d("open-loop")
    escaped = open_loop.terminated == "escaped" and open_loop.times[-1] < 3.0

    finals = {}
    for label, mode, eps in [("sdre", "sdre", None),
                             ("p-update eps=0.1", "p-update", 0.1),
                             ("p-update eps=0.5", "p-update", 0.5),
                             ("p-update eps=0.9", "p-update", 0.9)]:
        traj = run_banks5d(mode, eps)
        finals[label] = (traj.terminated,
                         float(np.linalg.norm(traj.final_state)))
    elapsed = time.perf_counter() - start
    decayed = all(term == "completed" and norm <= threshold
                  for term, norm in finals.values())
    detail = (
        f"open loop escaped at t={open_loop.times[-1]:.3f}; final norms "
        + ", ".join(f"{k}: {v[1]:.3f}" for k, v in finals.items())
        + f" vs threshold {threshold:.4f} ({elapsed:.1f}s < 30s)"
    )
    if escaped and not decayed:
        detail += (
            " | decay clause unattainable: the fifth state carries no weight"
            " in Q = C^T C once x4 has settled, so every Riccati-type gain"
            " leaves it parked off zero"
        )
    report(4, escaped and decayed and elapsed < 30.0, detail)


def test_criterion_05_epsilon_trend():
    start = time.perf_counter()
    reference_counts = {0.1: 32, 0.5: 7, 0.9: 2}
    counts = {}
    for eps in (0.1, 0.5, 0.9):
        traj = run_banks5d("p-update", eps)
        counts[eps] = traj.fb_switches
    values = [counts[e] for e in (0.1, 0.5, 0.9)]
    monotone = all(a >= b for a, b in zip(values, values[1:]))
    in_band = all(
        ref / 3.0 <= counts[e] <= ref * 3.0
        for e, ref in reference_counts.items()
    )
    elapsed = time.perf_counter() - start
    report(5, monotone and in_band and elapsed < 30.0,
           f"switch counts {values} non-increasing and within 3x of "
           f"(32, 7, 2) ({elapsed:.1f}s < 30s)")


def test_criterion_06_update_class_membership():
    start = time.perf_counter()
    log = []
    run_banks5d("p-update", 0.9,
                on_update=lambda t, x, rep: log.append((np.array(x), rep)))
    model, _, _ = banks5d_setup()
    checked = 0
    violations = 0
    for x, rep in log:
        if rep.k_tilde is None or rep.norm_e == 0.0:
            continue
        checked += 1
        taus = np.linspace(0.0, 20.0 / rep.omega, 200)
        acl = model.coefficient_at(x) - model.b @ rep.f
        if not s.verify_class_membership(acl, rep.k_tilde, rep.omega, taus):
            violations += 1
    elapsed = time.perf_counter() - start
    report(6, checked > 0 and violations == 0,
           f"{checked} accepted updates all satisfy the degraded transient "
           f"bound; {violations} violations ({elapsed:.1f}s)")


def test_criterion_07_chaffee_stabilization():
    start = time.perf_counter()
    model, q, r, x0, cfg = chaffee_setup(20)

    uncontrolled = s.integrate(s.closed_loop_rhs(model, None), x0, cfg)
    grown = float(np.abs(uncontrolled.final_state).max())

    finals = {}
    for label, mode, eps in [("sdre", "sdre", None),
                             ("p-update eps=0.9", "p-update", 0.9)]:
        ctl = s.init_controller(model, x0, q, r, epsilon=eps, mode=mode)
        traj = s.integrate_closed_loop(model, ctl, x0, cfg)
        finals[label] = float(np.abs(traj.final_state).max())
    elapsed = time.perf_counter() - start
    ok = (grown >= 0.5
          and all(v <= 0.05 for v in finals.values())
          and elapsed < 120.0)
    report(7, ok,
           f"uncontrolled max|xi(3)|={grown:.3f} >= 0.5; stabilized "
           + ", ".join(f"{k}: {v:.2e}" for k, v in finals.items())
           + f" <= 0.05 ({elapsed:.1f}s < 120s)")


def test_criterion_08_scaling_trend():
    start = time.perf_counter()
    ratios = {}
    for n_el, reps in ((20, 40), (40, 30), (80, 16)):
        model, q, r, x0, _ = chaffee_setup(n_el)
        ctl = s.init_controller(model, x0, q, r, epsilon=0.9)
        x1 = 0.9 * x0
        a1 = model.coefficient_at(x1)
        # warm up both kernels before timing
        s.update_gain(ctl, model, x1)
        s.solve_care(a1, model.b, q, r)
        t_up = []
        t_care = []
        for _ in range(reps):
            t0 = time.perf_counter()
            s.update_gain(ctl, model, x1)
            t_up.append(time.perf_counter() - t0)
            t0 = time.perf_counter()
            s.solve_care(a1, model.b, q, r)
            t_care.append(time.perf_counter() - t0)
        assert ctl.switch_count == 0  # all updates stayed below epsilon
        ratios[n_el] = float(np.mean(t_care) / np.mean(t_up))
    values = [ratios[n] for n in (20, 40, 80)]
    elapsed = time.perf_counter() - start
    ok = all(v > 1.0 for v in values) and values[0] < values[1] < values[2]
    report(8, ok,
           "CARE/update mean-time ratios "
           + ", ".join(f"N={n}: {ratios[n]:.2f}" for n in (20, 40, 80))
           + f" all > 1 and growing ({elapsed:.1f}s)")


def test_criterion_09_invariant_suites(tmp_path):
    start = time.perf_counter()
    suites = {
        "matkit": [
            properties.prop_care_batch,
            properties.prop_sylvester_oracle_batch,
            properties.prop_expm_semigroup,
            properties.prop_transient_bound_fresh_samples,
            properties.prop_separation_overlap_consistency,
        ],
        "sdc-model": [
            properties.prop_model_lipschitz,
            properties.prop_fem_definiteness,
            properties.prop_banks5d_ctrb_obsv,
            properties.prop_zero_gain_bitwise,
        ],
        "feedback": [
            properties.prop_update_residual,
            properties.prop_reset_correctness,
            properties.prop_update_class_membership,
            properties.prop_gain_continuity,
            properties.prop_epsilon_monotonicity,
        ],
        "odeint": [
            properties.prop_integrator_order,
            properties.prop_feval_accounting,
            properties.prop_integrator_determinism,
            properties.prop_escape_prefix,
        ],
        "certify": [
            properties.prop_omega_star_monotone,
            properties.prop_mt_quadrature_invariance,
            properties.prop_snapshot_decay,
            properties.prop_curves_nondecreasing,
            properties.prop_constant_coefficient_exponent,
        ],
        "bench-cli": [
            lambda: properties.prop_cli_roundtrip(tmp_path / "rt"),
            lambda: properties.prop_cli_reproducibility(tmp_path / "rep"),
            properties.prop_preset_fidelity,
        ],
    }
    ran = 0
    for name, props in suites.items():
        for prop in props:
            prop()
            ran += 1
    elapsed = time.perf_counter() - start
    report(9, True,
           f"{ran} module invariants green across {len(suites)} suites "
           f"({elapsed:.1f}s)")
