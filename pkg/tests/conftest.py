"""Shared generators and independent oracles for the test suite."""

import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Repeat the acceptance pass/fail lines after the test run."""
    try:
        import test_acceptance
    except ImportError:
        return
    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.RESULTS:
            terminalreporter.write_line(line)


def random_stabilizable(rng, n_max=30, p_max=3):
    """Random (A, B, Q, R) with a stabilizing Riccati solution.

    A random (A, B) pair is controllable with probability one and a
    full-rank Q keeps every mode observable, so the stabilizing solution
    exists and is well scaled; the construction is deterministic for a
    seeded generator.
    """
    n = int(rng.integers(1, n_max + 1))
    p = int(rng.integers(1, p_max + 1))
    # the -0.5 I shift keeps the unstable part small enough that a
    # single input can stabilize it without P leaving float64 range
    a = rng.standard_normal((n, n)) / np.sqrt(n) - 0.5 * np.eye(n)
    b = rng.standard_normal((n, p))
    c = rng.standard_normal((n, n))
    q = c.T @ c
    m = rng.standard_normal((p, p))
    r = m.T @ m + 0.1 * np.eye(p)
    return a, b, q, r


def random_disjoint_pair(rng, nm_max=100):
    """Random Sylvester operands with well-separated spectra.

    The left operand is shifted into the right half-plane and the right
    operand into the left half-plane, so their spectra cannot meet.
    """
    n = int(rng.integers(1, 11))
    m_dim = int(rng.integers(1, max(2, nm_max // n) + 1))
    a1 = rng.standard_normal((n, n)) / np.sqrt(n) + 2.0 * np.eye(n)
    a2 = rng.standard_normal((m_dim, m_dim)) / np.sqrt(m_dim) - 2.0 * np.eye(m_dim)
    c = rng.standard_normal((n, m_dim))
    return a1, a2, c


def kron_sylvester_solve(a1, a2, c):
    """Direct Kronecker-system solve of ``A1 E - E A2 = C``.

    Independent oracle: column-stacking vectorization turns the equation
    into ``(I (x) A1 - A2^T (x) I) vec(E) = vec(C)`` and a dense solve
    recovers E.
    """
    n, m = a1.shape[0], a2.shape[0]
    op = np.kron(np.eye(m), a1) - np.kron(a2.T, np.eye(n))
    vec_c = c.reshape(-1, order="F")
    return np.linalg.solve(op, vec_c).reshape((n, m), order="F")


def expm_eig_oracle(a, t=1.0):
    """Eigendecomposition evaluation of exp(A t) for diagonalizable A."""
    lam, v = np.linalg.eig(np.asarray(a, dtype=float) * t)
    return (v @ np.diag(np.exp(lam)) @ np.linalg.inv(v)).real


def shared_eigenvalue_pair(rng, n=4, m=3):
    """Operand pair constructed to share one eigenvalue exactly.

    Both matrices are orthogonal conjugations of triangular matrices
    with a common diagonal entry.
    """
    shared = 0.7
    t1 = np.triu(rng.standard_normal((n, n)))
    t2 = np.triu(rng.standard_normal((m, m)))
    t1[np.diag_indices(n)] = np.arange(1, n + 1, dtype=float)
    t2[np.diag_indices(m)] = -np.arange(1, m + 1, dtype=float)
    t1[0, 0] = shared
    t2[0, 0] = shared
    q1, _ = np.linalg.qr(rng.standard_normal((n, n)))
    q2, _ = np.linalg.qr(rng.standard_normal((m, m)))
    return q1 @ t1 @ q1.T, q2 @ t2 @ q2.T
