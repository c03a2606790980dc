"""State-dependent-coefficient plant models.

A plant is a map ``x -> A(x)`` together with constant input and output
matrices, wrapped in :class:`SdcModel`.  Built-ins cover the parametrized
planar oscillator, the five-state two-input benchmark, and a 1-D
finite-element semi-discretization of the Chaffee-Infante reaction-
diffusion equation.  Models are immutable and their coefficient maps are
pure functions, safe for concurrent evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


class ModelError(Exception):
    """Base class for model construction/evaluation failures."""


class AlphaOutOfRangeError(ModelError):
    """Oscillator parameter outside [-1, 1]."""


class MeshTooCoarseError(ModelError):
    """Finite-element mesh has too few elements."""


class ShapeMismatchError(ModelError):
    """A gain or coefficient matrix has the wrong shape."""


@dataclass(frozen=True)
class SdcModel:
    """A plant ``x' = A(x) x + B u`` with output ``y = C x``.

    ``coefficient`` maps a state vector of length ``n`` to the n x n
    matrix ``A(x)``.  ``lipschitz_hint`` optionally carries a known bound
    on ``||A(x1)-A(x2)|| / ||x1-x2||``; ``mass`` optionally carries a
    symmetric positive-definite Gram matrix for mass-weighted norms on
    finite-element models, whose node coordinates live in ``coords``.
    """

    name: str
    n: int
    p: int
    q: int
    coefficient: Callable[[np.ndarray], np.ndarray]
    b: np.ndarray
    c: np.ndarray
    lipschitz_hint: Optional[float] = None
    mass: Optional[np.ndarray] = None
    coords: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if self.b.shape != (self.n, self.p):
            raise ShapeMismatchError(
                f"B must be {self.n}x{self.p}, got {self.b.shape}"
            )
        if self.c.shape != (self.q, self.n):
            raise ShapeMismatchError(
                f"C must be {self.q}x{self.n}, got {self.c.shape}"
            )

    def coefficient_at(self, x) -> np.ndarray:
        """Evaluate ``A(x)`` for a state vector of length ``n``."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise ShapeMismatchError(
                f"state must have length {self.n}, got shape {x.shape}"
            )
        return self.coefficient(x)


def oscillator_model(alpha: float) -> SdcModel:
    """Planar uncontrolled oscillator with state-dependent rotation.

    ``A(x) = [[-1, -(1 + x1^2)], [1 + x1^2, alpha]]`` for
    ``alpha in [-1, 1]``; both eigenvalues have real part
    ``(alpha - 1) / 2`` at every state.
    """
    if not -1.0 <= alpha <= 1.0:
        raise AlphaOutOfRangeError(f"alpha must lie in [-1, 1], got {alpha}")
    alpha = float(alpha)

    def coeff(x: np.ndarray) -> np.ndarray:
        w = 1.0 + x[0] * x[0]
        return np.array([[-1.0, -w], [w, alpha]])

    return SdcModel(
        name="oscillator",
        n=2, p=0, q=0,
        coefficient=coeff,
        b=np.zeros((2, 0)),
        c=np.zeros((0, 2)),
    )


def banks5d_model() -> SdcModel:
    """Five-state, two-input, two-output polynomial benchmark plant.

    The coefficient matrix depends on the state only through x1 and x4:

        A(x) = [[ 0,   1, 0, 0,     0    ],
                [ 0,   0, 1, 0,     0    ],
                [ 0,   0, 0, x4^2,  0    ],
                [-x1,  0, 0, 0,     x4^2 ],
                [ 0,   0, 0, 0,     0    ]]

    with inputs entering rows 3 and 5 and outputs reading x1 and x4.
    Note the (4,5) placement of the second x4^2 entry: with it the pair
    (A(x), B) is controllable and (A(x), C) observable at almost every
    state, which the (4,4) placement cannot provide (it leaves the fifth
    state permanently unobservable and the fourth state's dynamics beyond
    the reach of any input).
    """

    def coeff(x: np.ndarray) -> np.ndarray:
        w = x[3] * x[3]
        a = np.zeros((5, 5))
        a[0, 1] = 1.0
        a[1, 2] = 1.0
        a[2, 3] = w
        a[3, 0] = -x[0]
        a[3, 4] = w
        return a

    b = np.zeros((5, 2))
    b[2, 0] = 1.0
    b[4, 1] = 1.0
    c = np.zeros((2, 5))
    c[0, 0] = 1.0
    c[1, 3] = 1.0
    return SdcModel(name="banks5d", n=5, p=2, q=2, coefficient=coeff, b=b, c=c)


@dataclass(frozen=True)
class FemDiscretization:
    """Linear hat-function discretization of (0, 2) with a Dirichlet node
    eliminated at z=0 and a Neumann node retained at z=2.

    ``mass`` and ``stiffness`` are the Gram matrices of the free-node hat
    functions and their derivatives; ``free_nodes`` are the surviving node
    indices of the full 0..N mesh and ``coords`` their z positions.
    """

    n_elements: int
    h: float
    mass: np.ndarray
    stiffness: np.ndarray
    free_nodes: np.ndarray
    coords: np.ndarray


def assemble_fem(n_elements: int) -> FemDiscretization:
    """Assemble mass and stiffness matrices for ``n_elements`` equal
    elements on (0, 2), with the z=0 node eliminated.

    Interior stencils are (h/6)[1, 4, 1] for the mass and
    (1/h)[-1, 2, -1] for the stiffness; the last node carries half
    weights since only one element touches it.
    """
    if n_elements < 2:
        raise MeshTooCoarseError("at least 2 elements are required")
    n = int(n_elements)
    h = 2.0 / n
    mass = np.zeros((n, n))
    stiff = np.zeros((n, n))
    for i in range(n):
        last = i == n - 1
        mass[i, i] = h / 3.0 if last else 2.0 * h / 3.0
        stiff[i, i] = 1.0 / h if last else 2.0 / h
        if i + 1 < n:
            mass[i, i + 1] = mass[i + 1, i] = h / 6.0
            stiff[i, i + 1] = stiff[i + 1, i] = -1.0 / h
    nodes = np.arange(1, n + 1)
    return FemDiscretization(
        n_elements=n, h=h, mass=mass, stiffness=stiff,
        free_nodes=nodes, coords=h * nodes,
    )


_OBSERVATION_POINTS = (0.0, 0.5, 1.0, 1.5, 2.0)


def _observation_matrix(disc: FemDiscretization) -> np.ndarray:
    """Nodal-interpolation rows reading the solution at fixed z points.

    Points that fall between nodes are resolved by linear interpolation
    of the two neighbours; the eliminated z=0 point yields a zero row,
    kept for output-shape fidelity.
    """
    n = disc.n_elements
    h = disc.h
    c = np.zeros((len(_OBSERVATION_POINTS), n))
    for k, z in enumerate(_OBSERVATION_POINTS):
        if z <= 0.0:
            continue
        s = z / h
        i0 = int(np.floor(s + 1e-12))
        frac = s - i0
        if frac < 1e-12:
            c[k, i0 - 1] = 1.0
        else:
            if i0 >= 1:
                c[k, i0 - 1] = 1.0 - frac
            c[k, i0] = frac
    return c


def chaffee_infante_model(n_elements: int) -> SdcModel:
    """Finite-element semi-discretization of the Chaffee-Infante equation
    ``u_t = u_zz + 5(1 - u^2)u`` on (0, 2) with u(0)=0 and a Neumann
    control flux at z=2.

    The cubic reaction term is carried by nodal interpolation, which
    keeps the coefficient matrix affine in diag(x)^2:

        A(x) = -M^{-1} S + 5 (I - diag(x)^2),   B = M^{-1} e_last.

    Output rows read the solution at z in {0, 0.5, 1, 1.5, 2}; the mass
    matrix is attached for mass-weighted norms.
    """
    if n_elements < 4:
        raise MeshTooCoarseError("at least 4 elements are required")
    disc = assemble_fem(n_elements)
    n = disc.n_elements
    base = -np.linalg.solve(disc.mass, disc.stiffness) + 5.0 * np.eye(n)
    diag = np.diag_indices(n)

    def coeff(x: np.ndarray) -> np.ndarray:
        a = base.copy()
        a[diag] -= 5.0 * x * x
        return a

    e_last = np.zeros(n)
    e_last[-1] = 1.0
    b = np.linalg.solve(disc.mass, e_last).reshape(-1, 1)
    c = _observation_matrix(disc)
    return SdcModel(
        name=f"chaffee{n_elements}",
        n=n, p=1, q=c.shape[0],
        coefficient=coeff, b=b, c=c,
        mass=disc.mass, coords=disc.coords,
    )


def chaffee_initial_state(model: SdcModel, amplitude: float = 0.2) -> np.ndarray:
    """Default initial profile ``amplitude * sin(pi z / 2)`` at the nodes."""
    if model.coords is None:
        raise ModelError("model carries no node coordinates")
    return amplitude * np.sin(0.5 * np.pi * model.coords)


def closed_loop_rhs(model: SdcModel, gain=None):
    """Right-hand side ``(t, x) -> (A(x) - B F(x)) x``.

    ``gain`` maps the state to a p x n feedback matrix; with ``None`` (or
    on input-free models) the open-loop map ``A(x) x`` is returned.
    """
    if gain is None or model.p == 0:

        def rhs_open(t, x):
            return model.coefficient(np.asarray(x, dtype=float)) @ x

        return rhs_open

    b = model.b
    expected = (model.p, model.n)

    def rhs_closed(t, x):
        x = np.asarray(x, dtype=float)
        f = gain(x)
        if f.shape != expected:
            raise ShapeMismatchError(
                f"gain must be {expected}, got {f.shape}"
            )
        return model.coefficient(x) @ x - b @ (f @ x)

    return rhs_closed
