"""Catalogue of concrete nonlinearities: F, G, R and boundary terms."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse.linalg as spla
from scipy.integrate import quad
from scipy.special import expit

from .assembly import stiffness_full
from .errors import AuxSingularError, EtaBoundsError, TimeOutOfRangeError
from .mesh import MeshBundle

_TWO_OVER_SQRT_PI = 2.0 / np.sqrt(np.pi)
_TAIL = 45.0  # e^{-45} ~ 3e-20, far below the relative target


class Kind(enum.Enum):
    EXPONENTIAL = "EXPONENTIAL"
    FERMI_DIRAC_HALF = "FERMI_DIRAC_HALF"
    NONLOCAL_ETA = "NONLOCAL_ETA"
    PIECEWISE_TIME_Z = "PIECEWISE_TIME_Z"
    THERMISTOR_R = "THERMISTOR_R"
    CUSTOM_SCALAR = "CUSTOM_SCALAR"
    IDENTITY = "IDENTITY"


# ---------------------------------------------------------------------------
# Fermi-Dirac integral of order 1/2


def _fd_integral(t: float, weight) -> float:
    split = max(t, 0.0)
    parts = [(0.0, split), (split, split + _TAIL)] if split > 0 else [(0.0, _TAIL)]
    total = 0.0
    for a, b in parts:
        val, _ = quad(weight, a, b, args=(t,), epsabs=0.0, epsrel=1e-13, limit=200)
        total += val
    return _TWO_OVER_SQRT_PI * total


def _fd_integrand(s, t):
    # sqrt(s) / (1 + e^{s - t}) with a logistic that cannot overflow
    return np.sqrt(s) * expit(t - s)


def _fd_deriv_integrand(s, t):
    p = expit(t - s)
    return np.sqrt(s) * p * (1.0 - p)


def fermi_dirac_half(t):
    """``(2/sqrt(pi)) int_0^inf sqrt(s) / (1 + exp(s - t)) ds``.

    Adaptive Gauss-Kronrod quadrature split at ``max(t, 0)``; the tail
    beyond ``max(t, 0) + 45`` is below ``1e-19`` relative and dropped.
    """
    if np.ndim(t) == 0:
        return _fd_integral(float(t), _fd_integrand)
    return np.array([_fd_integral(float(x), _fd_integrand) for x in np.ravel(t)]).reshape(np.shape(t))


def fermi_dirac_half_prime(t):
    """Derivative of :func:`fermi_dirac_half` by the differentiated integrand."""
    if np.ndim(t) == 0:
        return _fd_integral(float(t), _fd_deriv_integrand)
    return np.array([_fd_integral(float(x), _fd_deriv_integrand) for x in np.ravel(t)]).reshape(np.shape(t))


def fermi_dirac_half_oracle(t: float, dps: int = 30) -> float:
    """Independent reference: tanh-sinh quadrature in multiprecision."""
    import mpmath as mp

    with mp.workdps(dps):
        t = mp.mpf(t)
        f = lambda s: mp.sqrt(s) / (1 + mp.exp(s - t))  # noqa: E731
        pts = [0, t, mp.inf] if t > 0 else [0, mp.inf]
        return float(2 / mp.sqrt(mp.pi) * mp.quad(f, pts))


def fermi_dirac_half_polylog(t: float, dps: int = 30) -> float:
    """Closed form ``-Li_{3/2}(-e^t)``, a second cross-check."""
    import mpmath as mp

    with mp.workdps(dps):
        return float(mp.re(-mp.polylog(mp.mpf(3) / 2, -mp.exp(mp.mpf(t)))))


# ---------------------------------------------------------------------------
# handles


@dataclass
class NonlinearityHandle:
    """Scalar nonlinearity with value and (optional) derivative evaluators."""

    kind: Kind
    value: Callable
    derivative: Callable | None = None
    parameters: dict = field(default_factory=dict)
    delta: float | None = None  # recorded lower bound for G-type handles

    def __call__(self, u):
        return self.value(u)

    def prime(self, u):
        if self.derivative is None:
            raise ValueError(f"{self.kind.value} handle has no derivative")
        return self.derivative(u)


def exponential() -> NonlinearityHandle:
    return NonlinearityHandle(Kind.EXPONENTIAL, np.exp, np.exp)


def identity() -> NonlinearityHandle:
    return NonlinearityHandle(Kind.IDENTITY, lambda u: np.asarray(u, dtype=float),
                              lambda u: np.ones_like(np.asarray(u, dtype=float)))


def fermi_dirac() -> NonlinearityHandle:
    return NonlinearityHandle(Kind.FERMI_DIRAC_HALF, fermi_dirac_half, fermi_dirac_half_prime)


def constant(c: float) -> NonlinearityHandle:
    c = float(c)
    return NonlinearityHandle(Kind.CUSTOM_SCALAR, lambda u: np.full(np.shape(u), c),
                              lambda u: np.zeros(np.shape(u)), {"c": c}, delta=c)


def custom(value, derivative=None, delta=None, **params) -> NonlinearityHandle:
    return NonlinearityHandle(Kind.CUSTOM_SCALAR, value, derivative, params, delta)


def derivative_of(F: NonlinearityHandle) -> NonlinearityHandle:
    """``G = F'``; the choice that makes the reformulated problem semilinear."""
    return NonlinearityHandle(F.kind, F.prime, None, {"derivative_of": F.kind.value})


CATALOG = {
    "exponential": exponential,
    "fermi_dirac_half": fermi_dirac,
    "identity": identity,
    "constant": constant,
}


# ---------------------------------------------------------------------------
# nonlocal coefficient


def nonlocal_G(u, eta: Callable, phi, M, bounds=None) -> float:
    """``eta(u^T M phi)``, a spatially constant coefficient scale.

    ``bounds = (lo, hi)`` are the declared positive bounds of ``eta``;
    a value outside them raises ``EtaBoundsError``.
    """
    r = float(np.asarray(u) @ (M @ np.asarray(phi)))
    val = float(eta(r))
    if bounds is not None:
        lo, hi = bounds
        if not (lo <= val <= hi) or lo <= 0:
            raise EtaBoundsError(f"eta({r}) = {val} violates the bounds {bounds}")
    return val


def nonlocal_handle(eta, phi, M, bounds) -> Callable:
    """G as a function of the state, for use in the solver."""
    return lambda u: nonlocal_G(u, eta, phi, M, bounds)


# ---------------------------------------------------------------------------
# reaction terms


def cell_values(mesh: MeshBundle, u_full) -> tuple[np.ndarray, np.ndarray]:
    """Cell averages and (constant) gradients of a P1 function."""
    u_full = np.asarray(u_full, dtype=float)
    loc = u_full[mesh.cells]
    return loc.mean(axis=1), np.einsum("ci,cik->ck", loc, mesh.gradients)


@dataclass
class TimePieces:
    """Half-open time intervals ``[t_l, t_{l+1})`` with one ``Z_l`` each."""

    breaks: list
    functions: list
    lipschitz: float | None = None

    def __post_init__(self):
        if len(self.breaks) != len(self.functions) + 1:
            raise ValueError("need len(functions) + 1 breakpoints")
        if np.any(np.diff(self.breaks) <= 0):
            raise ValueError("breakpoints must increase")

    def select(self, t: float) -> int:
        b = self.breaks
        if t < b[0] or t > b[-1]:
            raise TimeOutOfRangeError(f"time {t} outside [{b[0]}, {b[-1]}]")
        if t == b[-1]:
            return len(self.functions) - 1  # closing end point of the interval
        return int(np.searchsorted(b, t, side="right") - 1)


def piecewise_time_R(t: float, u_values, grad_values, pieces: TimePieces) -> np.ndarray:
    """Cellwise density ``Z_l(u, grad u)`` for the piece containing ``t``."""
    Z = pieces.functions[pieces.select(t)]
    return np.asarray(Z(np.asarray(u_values), np.asarray(grad_values)), dtype=float)


def piecewise_time_reaction(mesh: MeshBundle, pieces: TimePieces) -> Callable:
    """``R(t, u_full)`` returning cell densities, for use in the solver."""

    def R(t, u_full):
        ubar, grad = cell_values(mesh, u_full)
        return piecewise_time_R(t, ubar, grad, pieces)

    return R


def sampled_lipschitz(Z: Callable, a_radius: float, b_radius: float, dim: int,
                      pairs: int = 1000, seed: int = 0) -> float:
    """Largest sampled ratio of ``|Z(a,b) - Z(a',b')|`` to the right-hand side
    of the quadratic-growth Lipschitz condition with unit constant."""
    rng = np.random.default_rng(seed)
    a = rng.uniform(-a_radius, a_radius, pairs)
    a2 = rng.uniform(-a_radius, a_radius, pairs)
    b = rng.uniform(-b_radius, b_radius, (pairs, dim))
    b2 = rng.uniform(-b_radius, b_radius, (pairs, dim))
    nb, nb2 = np.linalg.norm(b, axis=1), np.linalg.norm(b2, axis=1)
    rhs = np.abs(a - a2) * (nb ** 2 + nb2 ** 2) + np.linalg.norm(b - b2, axis=1) * (nb + nb2)
    lhs = np.abs(Z(a, b) - Z(a2, b2))
    keep = rhs > 0
    return float(np.max(lhs[keep] / rhs[keep]))


@dataclass
class AuxBoundary:
    """Boundary data of the auxiliary potential problem.

    ``dirichlet`` maps facet labels to a constant or a function of the
    vertex coordinates; the remaining boundary is homogeneous Neumann.
    """

    dirichlet: dict


def thermistor_R(v_full, iota: Callable, aux: AuxBoundary, mesh: MeshBundle) -> np.ndarray:
    """Joule heating density ``iota(v) |grad phi|^2`` per cell.

    ``phi`` solves ``-div iota(v) grad phi = 0`` with the Dirichlet data of
    ``aux``; ``iota(v)`` is averaged from vertex values to cells.
    """
    v_full = np.asarray(v_full, dtype=float)
    iv = np.asarray(iota(v_full), dtype=float)
    if np.any(iv <= 0):
        raise ValueError("iota must be positive")
    cell_iota = iv[mesh.cells].mean(axis=1)
    mats = np.tile(np.eye(mesh.dim), (mesh.nc, 1, 1))
    K = stiffness_full(mesh, mats, cell_iota).tocsr()
    phi = np.zeros(mesh.nv)
    fixed = np.zeros(mesh.nv, dtype=bool)
    for lab, data in aux.dirichlet.items():
        idx = mesh.facets[mesh.facets_with([lab])].ravel()
        fixed[idx] = True
        phi[idx] = data(mesh.vertices[idx]) if callable(data) else float(data)
    if not fixed.any():
        raise AuxSingularError("auxiliary problem has no Dirichlet part")
    free = np.flatnonzero(~fixed)
    if len(free):
        rhs = -(K[free][:, fixed] @ phi[fixed])
        try:
            phi[free] = spla.spsolve(K[free][:, free].tocsc(), rhs)
        except RuntimeError as exc:
            raise AuxSingularError(str(exc)) from exc
        if not np.all(np.isfinite(phi)):
            raise AuxSingularError("auxiliary solve did not produce a finite potential")
    grad = np.einsum("ci,cik->ck", phi[mesh.cells], mesh.gradients)
    return cell_iota * np.sum(grad ** 2, axis=1)
