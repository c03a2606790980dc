"""Dense real linear-algebra kernels.

Factorizations, matrix functions, and the Riccati/Sylvester solvers that
the controller and certificate machinery are built on.  Everything here is
a pure function of its inputs: matrices go in, new matrices come out, and
no global state is touched, so all operations are safe to call from
concurrent tasks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.linalg import lapack


class MatkitError(Exception):
    """Base class for numerical kernel failures."""


class NonSquareError(MatkitError):
    """A square matrix was required."""


class ConvergenceFailureError(MatkitError):
    """An iterative factorization did not converge."""


class ConjugatePairSplitError(MatkitError):
    """An eigenvalue selector separated a complex-conjugate pair."""


class NotStabilizableError(MatkitError):
    """No stabilizing Riccati solution exists for the given data."""


class SingularProjectionError(MatkitError):
    """The leading block of the invariant-subspace basis is singular."""


class SpectraOverlapError(MatkitError):
    """Sylvester operands share (or nearly share) an eigenvalue."""


class TooLargeError(MatkitError):
    """Problem size exceeds the dense desk-scale guard."""


class UnstableMatrixError(MatkitError):
    """Spectral abscissa violates the requested decay rate."""


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Validate and return ``a`` as a finite 2-D float64 array."""
    m = np.atleast_2d(np.asarray(a, dtype=float))
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got ndim={m.ndim}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite entries")
    return m


def as_square(a, name: str = "matrix") -> np.ndarray:
    m = as_matrix(a, name)
    if m.shape[0] != m.shape[1]:
        raise NonSquareError(f"{name} must be square, got shape {m.shape}")
    return m


def frobenius_norm(a) -> float:
    """Frobenius norm (entrywise root-sum-of-squares)."""
    return float(np.linalg.norm(as_matrix(a), "fro"))


def operator_norm(a) -> float:
    """Spectral norm, i.e. the largest singular value."""
    m = as_matrix(a)
    if m.size == 0:
        return 0.0
    return float(np.linalg.svd(m, compute_uv=False)[0])


def spectral_abscissa(a) -> float:
    """Largest real part over the eigenvalues of a square matrix."""
    m = as_square(a)
    return float(np.linalg.eigvals(m).real.max())


@dataclass(frozen=True)
class SchurForm:
    """Real Schur factorization ``A = Q T Q^T``.

    ``t`` is quasi-upper-triangular (1x1 and 2x2 diagonal blocks), ``q``
    orthogonal, and ``eigenvalues`` lists the spectrum read off the
    diagonal blocks of ``t``.
    """

    q: np.ndarray
    t: np.ndarray
    eigenvalues: np.ndarray

    @property
    def n(self) -> int:
        return self.t.shape[0]

    def matrix(self) -> np.ndarray:
        """Reassemble the factored matrix ``Q T Q^T``."""
        return self.q @ self.t @ self.q.T


def _quasi_triangular_eigenvalues(t: np.ndarray) -> np.ndarray:
    """Eigenvalues of a real quasi-upper-triangular matrix, block by block."""
    n = t.shape[0]
    vals = np.empty(n, dtype=complex)
    i = 0
    while i < n:
        if i + 1 < n and t[i + 1, i] != 0.0:
            a, b = t[i, i], t[i, i + 1]
            c, d = t[i + 1, i], t[i + 1, i + 1]
            mean = 0.5 * (a + d)
            disc = mean * mean - (a * d - b * c)
            root = np.sqrt(complex(disc))
            vals[i] = mean + root
            vals[i + 1] = mean - root
            i += 2
        else:
            vals[i] = t[i, i]
            i += 1
    return vals


def real_schur(a) -> SchurForm:
    """Real Schur factorization of a square matrix.

    Raises
    ------
    NonSquareError
        If the input is not square.
    ConvergenceFailureError
        If the underlying QR iteration fails to converge.
    """
    m = as_square(a, "A")
    try:
        t, q = sla.schur(m, output="real")
    except (np.linalg.LinAlgError, sla.LinAlgError) as exc:
        raise ConvergenceFailureError(f"QR iteration failed: {exc}") from exc
    return SchurForm(q=q, t=t, eigenvalues=_quasi_triangular_eigenvalues(t))


def order_schur(s: SchurForm, predicate) -> SchurForm:
    """Reorder a Schur form so the selected eigenvalues lead.

    ``predicate`` maps a complex eigenvalue to bool and must select a set
    closed under conjugation; complex pairs cannot be separated.
    """
    keep = np.array([bool(predicate(lam)) for lam in s.eigenvalues])
    for lam, k in zip(s.eigenvalues, keep):
        if lam.imag != 0.0 and bool(predicate(np.conj(lam))) != k:
            raise ConjugatePairSplitError(
                f"selector splits the conjugate pair at {lam:.6g}"
            )
    try:
        t, q, sdim = sla.schur(
            s.matrix(),
            output="real",
            sort=lambda re, im: bool(predicate(complex(re, im))),
        )
    except (np.linalg.LinAlgError, sla.LinAlgError) as exc:
        raise ConvergenceFailureError(f"reordering failed: {exc}") from exc
    if sdim != int(keep.sum()):
        raise ConvergenceFailureError(
            f"reordering selected {sdim} eigenvalues, expected {int(keep.sum())}"
        )
    return SchurForm(q=q, t=t, eigenvalues=_quasi_triangular_eigenvalues(t))


# Pade-13 coefficients and scaling threshold from the standard
# scaling-and-squaring algorithm.
_PADE13 = np.array(
    [
        64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
        1187353796428800.0, 129060195264000.0, 10559470521600.0,
        670442572800.0, 33522128640.0, 1323241920.0, 40840800.0,
        960960.0, 16380.0, 182.0, 1.0,
    ]
)
_THETA13 = 5.371920351148152


def matrix_exponential(a, t: float = 1.0) -> np.ndarray:
    """Matrix exponential ``exp(A t)``.

    Order-13 diagonal Pade approximant with power-of-two scaling and
    repeated squaring; accurate to close to unit roundoff for any input.
    """
    m = as_square(a, "A")
    if not np.isfinite(t):
        raise ValueError("t must be finite")
    m = m * float(t)
    n = m.shape[0]
    if n == 0:
        return np.zeros((0, 0))
    norm1 = float(np.linalg.norm(m, 1))
    if norm1 == 0.0:
        return np.eye(n)
    squarings = 0
    if norm1 > _THETA13:
        squarings = int(np.ceil(np.log2(norm1 / _THETA13)))
        m = m / (2.0 ** squarings)
    ident = np.eye(n)
    c = _PADE13
    m2 = m @ m
    m4 = m2 @ m2
    m6 = m2 @ m4
    u = m @ (
        m6 @ (c[13] * m6 + c[11] * m4 + c[9] * m2)
        + c[7] * m6 + c[5] * m4 + c[3] * m2 + c[1] * ident
    )
    v = (
        m6 @ (c[12] * m6 + c[10] * m4 + c[8] * m2)
        + c[6] * m6 + c[4] * m4 + c[2] * m2 + c[0] * ident
    )
    f = np.linalg.solve(v - u, v + u)
    for _ in range(squarings):
        f = f @ f
    return f


def spectral_norms(stack: np.ndarray) -> np.ndarray:
    """Spectral norms of a stacked array of matrices ``(..., n, m)``.

    Uses a closed form for 1x1 and 2x2 blocks; batched SVD otherwise.
    """
    stack = np.asarray(stack, dtype=float)
    n, m = stack.shape[-2:]
    if n == 1 and m == 1:
        return np.abs(stack[..., 0, 0])
    if n == 2 and m == 2:
        fro2 = np.einsum("...ij,...ij->...", stack, stack)
        det = (
            stack[..., 0, 0] * stack[..., 1, 1]
            - stack[..., 0, 1] * stack[..., 1, 0]
        )
        disc = np.sqrt(np.maximum(fro2 * fro2 - 4.0 * det * det, 0.0))
        return np.sqrt(np.maximum(0.5 * (fro2 + disc), 0.0))
    return np.linalg.svd(stack, compute_uv=False)[..., 0]


def _eig_decomposition(a: np.ndarray):
    """Eigendecomposition usable for function evaluation, or None.

    Returns ``(lam, v, vinv)`` when ``a`` is numerically diagonalizable
    (moderate eigenvector conditioning and small reconstruction error).
    """
    lam, v = np.linalg.eig(a)
    try:
        vinv = np.linalg.inv(v)
    except np.linalg.LinAlgError:
        return None
    cond = np.linalg.cond(v)
    if not np.isfinite(cond) or cond > 1e10:
        return None
    recon = (v * lam) @ vinv
    scale = max(1.0, float(np.linalg.norm(a, "fro")))
    if np.linalg.norm(recon.real - a, "fro") > 1e-8 * scale:
        return None
    return lam, v, vinv


def expm_on_grid(a, taus) -> np.ndarray:
    """Stacked ``exp(A tau_k)`` for a grid of scalars ``tau_k``.

    Fast eigendecomposition path when the matrix is comfortably
    diagonalizable; otherwise one Pade evaluation per grid point.
    """
    m = as_square(a, "A")
    taus = np.asarray(taus, dtype=float).ravel()
    dec = _eig_decomposition(m)
    if dec is not None:
        lam, v, vinv = dec
        ex = np.exp(np.outer(taus, lam))
        return np.einsum("ij,sj,jk->sik", v, ex, vinv).real
    return np.stack([matrix_exponential(m, tk) for tk in taus])


def _refine_peak(eval_g, lo: float, hi: float, iters: int = 48) -> float:
    """Golden-section maximization of ``eval_g`` on ``[lo, hi]``."""
    gr = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - gr * (b - a)
    d = a + gr * (b - a)
    fc, fd = eval_g(c), eval_g(d)
    for _ in range(iters):
        if fc < fd:
            a, c, fc = c, d, fd
            d = a + gr * (b - a)
            fd = eval_g(d)
        else:
            b, d, fd = d, c, fc
            c = b - gr * (b - a)
            fc = eval_g(c)
    return max(fc, fd)


def transient_bound(a, omega: float, tau_max: float | None = None,
                    samples: int = 2000) -> float:
    """Smallest sampled constant K with ``||exp(A tau)|| <= K exp(-omega tau)``.

    The growth function ``g(tau) = ||exp(A tau)|| exp(omega tau)`` is
    sampled on a log-spaced grid over ``(0, tau_max]`` and the dominant
    peak is sharpened by golden-section search.  For diagonalizable
    matrices the eigenvector condition number is a second valid bound and
    the smaller of the two is returned.  Always at least 1.

    Raises
    ------
    UnstableMatrixError
        If the spectral abscissa exceeds ``-omega`` (beyond roundoff).
    """
    m = as_square(a, "A")
    alpha = spectral_abscissa(m)
    slack = 1e-9 * max(1.0, abs(omega))
    if alpha > -omega + slack:
        raise UnstableMatrixError(
            f"spectral abscissa {alpha:.6g} exceeds -omega = {-omega:.6g}"
        )
    if tau_max is None:
        if omega <= 0.0:
            raise ValueError("tau_max is required when omega <= 0")
        tau_max = 50.0 / omega
    if tau_max <= 0.0:
        raise ValueError("tau_max must be positive")
    taus = np.geomspace(tau_max * 1e-6, tau_max, int(samples))
    exps = expm_on_grid(m, taus)
    g = spectral_norms(exps) * np.exp(omega * taus)
    i = int(np.argmax(g))
    lo = taus[max(i - 1, 0)]
    hi = taus[min(i + 1, len(taus) - 1)]

    dec = _eig_decomposition(m)
    if dec is not None:
        lam, v, vinv = dec

        def g_at(tau: float) -> float:
            e = ((v * np.exp(lam * tau)) @ vinv).real
            return float(spectral_norms(e[None])[0]) * np.exp(omega * tau)
    else:

        def g_at(tau: float) -> float:
            e = matrix_exponential(m, tau)
            return float(spectral_norms(e[None])[0]) * np.exp(omega * tau)

    k_sampled = max(1.0, float(g.max()), _refine_peak(g_at, lo, hi))
    if dec is not None:
        k_cond = max(1.0, float(np.linalg.cond(dec[1], 2)))
        return min(k_sampled, k_cond)
    return k_sampled


@dataclass(frozen=True)
class CareSolution:
    """Stabilizing Riccati solution with its closed-loop matrix.

    ``p`` is symmetric positive semidefinite, ``closed_loop`` is
    ``A - B R^{-1} B^T P`` with all eigenvalues in the open left
    half-plane, and ``residual_norm`` is the Frobenius norm of the
    Riccati residual.
    """

    p: np.ndarray
    closed_loop: np.ndarray
    residual_norm: float


def _check_symmetric(m: np.ndarray, name: str) -> np.ndarray:
    scale = max(1.0, float(np.linalg.norm(m, "fro")))
    if np.linalg.norm(m - m.T, "fro") > 1e-10 * scale:
        raise ValueError(f"{name} must be symmetric")
    return 0.5 * (m + m.T)


def solve_care(a, b, q, r) -> CareSolution:
    """Stabilizing solution of ``P A + A^T P - P B R^{-1} B^T P + Q = 0``.

    Computed from the ordered real Schur form of the associated 2n x 2n
    Hamiltonian matrix: the n eigenvalues in the open left half-plane are
    brought to the leading block and P is recovered from the spanning
    invariant subspace.  Degenerate data (modes that carry no weight in Q
    and sit on the imaginary axis) is retried with an escalating diagonal
    regularization of Q; the result is always validated against the
    original equation, so the returned residual refers to the unmodified
    data.

    Raises
    ------
    NotStabilizableError
        If no n-dimensional stable invariant subspace yields a valid
        stabilizing solution.
    SingularProjectionError
        If the leading subspace block is numerically singular for every
        attempt.
    """
    a = as_square(a, "A")
    n = a.shape[0]
    b = as_matrix(b, "B")
    if b.shape[0] != n:
        raise ValueError(f"B must have {n} rows, got {b.shape}")
    q = _check_symmetric(as_square(q, "Q"), "Q")
    r = _check_symmetric(as_square(r, "R"), "R")
    if r.shape[0] != b.shape[1]:
        raise ValueError("R must match the number of inputs")
    try:
        r_chol = sla.cho_factor(r)
    except np.linalg.LinAlgError as exc:
        raise ValueError("R must be positive definite") from exc
    q_eigs = np.linalg.eigvalsh(q)
    if q_eigs.min() < -1e-10 * max(1.0, abs(q_eigs).max()):
        raise ValueError("Q must be positive semidefinite")

    g = b @ sla.cho_solve(r_chol, b.T)
    g = 0.5 * (g + g.T)
    g_norm = float(np.linalg.norm(g, "fro"))
    q_norm = float(np.linalg.norm(q, "fro"))
    reg_scale = max(1.0, q_norm)

    failure = "no stable invariant subspace of dimension n"
    singular_seen = False
    for delta in (0.0, 1e-12, 1e-10, 1e-8):
        q_reg = q + delta * reg_scale * np.eye(n) if delta else q
        ham = np.block([[a, -g], [-q_reg, -a.T]])
        try:
            _, u, sdim = sla.schur(
                ham, output="real", sort=lambda re, im: re < 0.0
            )
        except (np.linalg.LinAlgError, sla.LinAlgError):
            failure = "Schur factorization of the Hamiltonian failed"
            continue
        if sdim != n:
            failure = f"stable subspace has dimension {sdim}, expected {n}"
            continue
        u1 = u[:n, :n]
        u2 = u[n:, :n]
        sv = np.linalg.svd(u1, compute_uv=False)
        if sv[-1] < 1e-13 * sv[0]:
            singular_seen = True
            failure = "leading subspace block is singular"
            continue
        p = np.linalg.solve(u1.T, u2.T).T
        p = 0.5 * (p + p.T)
        residual = p @ a + a.T @ p - p @ g @ p + q
        res_norm = float(np.linalg.norm(residual, "fro"))
        p_norm = float(np.linalg.norm(p, "fro"))
        tol = 1e-9 * max(1.0, q_norm, p_norm * p_norm * g_norm)
        closed_loop = a - g @ p
        if res_norm > tol:
            failure = f"residual {res_norm:.3e} exceeds tolerance {tol:.3e}"
            continue
        if spectral_abscissa(closed_loop) >= 0.0:
            failure = "closed loop is not Hurwitz"
            continue
        return CareSolution(p=p, closed_loop=closed_loop,
                            residual_norm=res_norm)
    if singular_seen:
        raise SingularProjectionError(failure)
    raise NotStabilizableError(failure)


def solve_sylvester(a1, a2, c, a2_schur: SchurForm | None = None) -> np.ndarray:
    """Solve ``A1 E - E A2 = C`` by Bartels-Stewart.

    Both operands are reduced to real Schur form, the transformed
    equation is solved by quasi-triangular back-substitution, and the
    result is rotated back.  ``a2_schur`` may carry a precomputed
    factorization of ``a2`` (the controller reuses the factorization of
    its frozen closed-loop matrix across many updates).

    Raises
    ------
    SpectraOverlapError
        If the operands share an eigenvalue to within
        ``1e-12 (||A1|| + ||A2||)``; the back-substitution pivots are
        exactly the eigenvalue differences, so a tiny pivot and a shared
        eigenvalue are the same event.  A residual blow-up after the
        solve is reported the same way.
    """
    a1 = as_square(a1, "A1")
    a2 = as_square(a2, "A2")
    c = as_matrix(c, "C")
    if c.shape != (a1.shape[0], a2.shape[0]):
        raise ValueError(
            f"C must be {a1.shape[0]}x{a2.shape[0]}, got {c.shape}"
        )
    s1 = real_schur(a1)
    s2 = a2_schur if a2_schur is not None else real_schur(a2)

    norm_scale = operator_norm(a1) + operator_norm(a2)
    pivot_floor = 1e-12 * max(1.0, norm_scale)
    gaps = np.abs(s1.eigenvalues[:, None] - s2.eigenvalues[None, :])
    if gaps.size and gaps.min() < pivot_floor:
        raise SpectraOverlapError(
            f"minimal eigenvalue separation {gaps.min():.3e} is below "
            f"{pivot_floor:.3e}"
        )

    f = s1.q.T @ c @ s2.q
    y, scale, info = lapack.dtrsyl(s1.t, s2.t, f, isgn=-1)
    if info < 0 or scale == 0.0:
        raise SpectraOverlapError("triangular Sylvester solve broke down")
    if info == 1:
        raise SpectraOverlapError(
            "triangular solve met near-common eigenvalues"
        )
    e = s1.q @ (y / scale) @ s2.q.T
    res = float(np.linalg.norm(a1 @ e - e @ a2 - c, "fro"))
    c_norm = float(np.linalg.norm(c, "fro"))
    if res > 1e-9 * max(1.0, c_norm):
        raise SpectraOverlapError(
            f"solution residual {res:.3e} exceeds 1e-9*max(1, ||C||); "
            "operand spectra are too close"
        )
    return e


def sylvester_operator_matrix(a1, a2) -> np.ndarray:
    """Matrix of ``X -> A1 X - X A2`` under column-stacking vectorization."""
    a1 = as_square(a1, "A1")
    a2 = as_square(a2, "A2")
    n, m = a1.shape[0], a2.shape[0]
    return np.kron(np.eye(m), a1) - np.kron(a2.T, np.eye(n))


def separation(a1, a2) -> float:
    """Separation of two spectra: the smallest singular value of the
    Sylvester operator ``X -> A1 X - X A2``.

    Assembled explicitly as a Kronecker matrix, so the combined dimension
    ``n*m`` is capped at 4096.
    """
    a1 = as_square(a1, "A1")
    a2 = as_square(a2, "A2")
    n, m = a1.shape[0], a2.shape[0]
    if n * m > 4096:
        raise TooLargeError(
            f"combined Kronecker dimension {n * m} exceeds 4096"
        )
    op = sylvester_operator_matrix(a1, a2)
    return float(np.linalg.svd(op, compute_uv=False)[-1])
