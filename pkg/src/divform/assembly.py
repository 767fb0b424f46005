"""P1 assembly of stiffness, mass and boundary mass; traces and norms."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from math import factorial
from typing import Callable

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from .coefficients import BoundaryData, CoefficientField
from .errors import CoefficientGapError, DimensionMismatchError, EmptySurfaceError, LabelError
from .mesh import FESpace, MeshBundle


def _scatter(cells: np.ndarray, local: np.ndarray, n: int) -> sps.csr_matrix:
    k = cells.shape[1]
    rows = np.repeat(cells, k, axis=1).ravel()
    cols = np.tile(cells, (1, k)).ravel()
    return sps.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))


def cell_coefficients(mesh: MeshBundle, mu: CoefficientField) -> np.ndarray:
    """Coefficient matrix of every cell, looked up at the cell centroid."""
    if mu.dim != mesh.dim:
        raise DimensionMismatchError("coefficient and mesh dimensions differ")
    idx = mu.region_index(mesh.centroids)
    if np.any(idx < 0):
        raise CoefficientGapError(f"{np.sum(idx < 0)} cells lie in no coefficient region")
    return np.stack(mu.matrices)[idx]


def stiffness_full(mesh: MeshBundle, mats: np.ndarray, scale=None) -> sps.csr_matrix:
    """Vertex-level stiffness for per-cell matrices ``mats`` (optionally scaled)."""
    G = mesh.gradients
    w = mesh.volumes if scale is None else mesh.volumes * scale
    local = np.einsum("c,cik,ckl,cjl->cij", w, G, mats, G)
    return _scatter(mesh.cells, local, mesh.nv)


def mass_full(mesh: MeshBundle) -> sps.csr_matrix:
    d = mesh.dim
    ref = (np.ones((d + 1, d + 1)) + np.eye(d + 1)) / ((d + 1) * (d + 2))
    local = mesh.volumes[:, None, None] * ref[None]
    return _scatter(mesh.cells, local, mesh.nv)


def facet_mass_full(mesh: MeshBundle, facet_idx, weights=None) -> sps.csr_matrix:
    """``int_facets w phi_i phi_j`` with piecewise constant ``w``."""
    facets = mesh.facets[facet_idx]
    k = mesh.dim  # vertices per facet
    meas = mesh.facet_measures[facet_idx]
    if weights is not None:
        meas = meas * weights
    ref = (np.ones((k, k)) + np.eye(k)) / (k * (k + 1))
    return _scatter(facets, meas[:, None, None] * ref[None], mesh.nv)


@dataclass
class DiscreteOperatorSet:
    """Discrete operators on the free dofs of ``space``.

    ``A0`` stiffness, ``M`` consistent mass, ``ML`` lumped mass (diagonal
    as a vector), ``Q`` Robin boundary mass, ``g`` the Neumann load.
    Vertex-level versions are kept with the suffix ``_full``.
    """

    space: FESpace
    A0_full: sps.csr_matrix
    M_full: sps.csr_matrix
    Q_full: sps.csr_matrix
    g_full: np.ndarray
    mu: CoefficientField | None = None
    bd: BoundaryData | None = None
    cell_mats: np.ndarray | None = field(default=None, repr=False)

    def _reduce(self, mat):
        f = self.space.free
        return mat[f][:, f].tocsr()

    @cached_property
    def A0(self):
        return self._reduce(self.A0_full)

    @cached_property
    def M(self):
        return self._reduce(self.M_full)

    @cached_property
    def Q(self):
        return self._reduce(self.Q_full)

    @cached_property
    def ML(self) -> np.ndarray:
        return np.asarray(self.M_full.sum(axis=1)).ravel()[self.space.free]

    @cached_property
    def g(self) -> np.ndarray:
        return self.g_full[self.space.free]

    @property
    def n(self) -> int:
        return self.space.dimension

    @cached_property
    def H1(self):
        return (self.A0 + self.M).tocsc()

    @cached_property
    def _H1_lu(self):
        return spla.splu(self.H1)


def assemble(mesh: MeshBundle, space: FESpace, mu: CoefficientField,
             bd: BoundaryData | None = None, cell_scale=None) -> DiscreteOperatorSet:
    """Assemble the operators of the form ``int mu grad u . grad v + int_Gamma kappa u v``.

    ``cell_scale`` multiplies the coefficient cellwise (used for the
    frozen quasilinear operator).
    """
    bd = BoundaryData() if bd is None else bd
    if space.dirichlet_labels != bd.dirichlet_part:
        raise LabelError("space and boundary data disagree on the Dirichlet part")
    mats = cell_coefficients(mesh, mu)
    A0 = stiffness_full(mesh, mats, cell_scale)
    M = mass_full(mesh)
    neumann = np.flatnonzero((mesh.labels > 0) & ~np.isin(mesh.labels, list(bd.dirichlet_part)))
    kap = np.array([bd.kappa_of(t) for t in mesh.labels[neumann]])
    nz = kap != 0
    Q = facet_mass_full(mesh, neumann[nz], kap[nz]) if nz.any() else sps.csr_matrix((mesh.nv, mesh.nv))
    gv = np.array([bd.g_of(t) for t in mesh.labels[neumann]])
    g = adjoint_trace_full(mesh, neumann[gv != 0], gv[gv != 0]) if np.any(gv != 0) else np.zeros(mesh.nv)
    return DiscreteOperatorSet(space, A0, M, Q, g, mu, bd, mats)


def _surface(mesh: MeshBundle, pi) -> np.ndarray:
    """Facet indices of a surface given by labels (set) or indices (array)."""
    if isinstance(pi, (set, frozenset, list, tuple)) and not isinstance(pi, np.ndarray):
        idx = mesh.facets_with(set(pi))
    else:
        idx = np.asarray(pi, dtype=np.int64)
    if len(idx) == 0:
        raise EmptySurfaceError("surface contains no facets")
    return idx


def trace(space: FESpace, u, pi, q_exp: float = 2.0):
    """Facet vertex values of ``u`` on ``pi`` and the ``L^q(pi)`` norm.

    ``q = 2`` uses the exact P1 facet mass; other exponents use the lumped
    facet quadrature (vertex values weighted by ``measure / d``).
    """
    mesh = space.mesh
    idx = _surface(mesh, pi)
    full = space.expand(u)
    vals = full[mesh.facets[idx]]
    meas = mesh.facet_measures[idx]
    if q_exp == 2:
        Mf = facet_mass_full(mesh, idx)
        norm = float(np.sqrt(max(full @ (Mf @ full), 0.0)))
    else:
        w = meas[:, None] / mesh.dim
        norm = float(np.sum(w * np.abs(vals) ** q_exp) ** (1.0 / q_exp))
    return vals, norm


def adjoint_trace_full(mesh: MeshBundle, idx, density) -> np.ndarray:
    density = np.asarray(density, dtype=float)
    facets = mesh.facets[idx]
    meas = mesh.facet_measures[idx]
    k = mesh.dim
    f = np.zeros(mesh.nv)
    if density.ndim == 1:
        np.add.at(f, facets, (density * meas / k)[:, None] * np.ones((1, k)))
    else:
        ref = (np.ones((k, k)) + np.eye(k)) / (k * (k + 1))
        np.add.at(f, facets, meas[:, None] * (density @ ref))
    return f


def adjoint_trace(space: FESpace, density, pi) -> np.ndarray:
    """Load ``f_i = int_pi density phi_i dsigma`` on the free dofs.

    ``density`` is one constant per facet of ``pi`` or P1 values with
    shape ``(n_facets, d)`` at the facet vertices.
    """
    mesh = space.mesh
    idx = _surface(mesh, pi)
    density = np.asarray(density, dtype=float)
    if density.ndim == 0:
        density = np.full(len(idx), float(density))
    if density.shape[0] != len(idx):
        raise DimensionMismatchError("one density value per facet required")
    return adjoint_trace_full(mesh, idx, density)[space.free]


def cell_load_full(mesh: MeshBundle, density) -> np.ndarray:
    """``int f phi_i`` for cellwise constant ``f``."""
    density = np.asarray(density, dtype=float)
    f = np.zeros(mesh.nv)
    np.add.at(f, mesh.cells, (density * mesh.volumes / (mesh.dim + 1))[:, None] * np.ones((1, mesh.dim + 1)))
    return f


def discrete_norms(ops: DiscreteOperatorSet, u, which: str = "L2", q: float = 2.0) -> float:
    """Discrete ``L2``, lumped ``Lq``, ``H1`` and dual ``H_minus1`` norms."""
    u = np.asarray(u, dtype=float)
    if u.shape[0] != ops.n:
        raise DimensionMismatchError(f"vector of length {u.shape[0]} for {ops.n} dofs")
    if which == "L2":
        return float(np.sqrt(max(u @ (ops.M @ u), 0.0)))
    if which == "Lq":
        return float(np.sum(ops.ML * np.abs(u) ** q) ** (1.0 / q))
    if which == "H1":
        return float(np.sqrt(max(u @ (ops.H1 @ u), 0.0)))
    if which == "H_minus1":
        if not u.any():
            return 0.0
        return float(np.sqrt(max(u @ ops._H1_lu.solve(u), 0.0)))
    raise ValueError(f"unknown norm {which!r}")


def element_stiffness(points, mu=None) -> np.ndarray:
    """Stiffness of a single simplex (reference helper)."""
    points = np.asarray(points, dtype=float)
    d = points.shape[1]
    mu = np.eye(d) if mu is None else np.asarray(mu, dtype=float)
    T = points[1:] - points[0]
    G = np.linalg.inv(T).T
    G = np.vstack([-G.sum(axis=0), G])
    vol = abs(np.linalg.det(T)) / factorial(d)
    return vol * G @ mu @ G.T


def _quadrature_rule(d: int):
    """Degree-2 barycentric rule with ``d + 1`` points and equal weights."""
    if d == 1:
        a = 0.5 + 0.5 / np.sqrt(3.0)
        return np.array([[a, 1 - a], [1 - a, a]]), np.full(2, 0.5)
    if d == 2:
        b = np.full((3, 3), 1 / 6) + np.eye(3) * 0.5
        return b, np.full(3, 1 / 3)
    if d == 3:
        a, c = 0.5854101966249685, 0.1381966011250105
        return np.full((4, 4), c) + np.eye(4) * (a - c), np.full(4, 0.25)
    raise ValueError("quadrature available for d <= 3")


def exact_errors(mesh: MeshBundle, u_full, exact: Callable, grad_exact: Callable | None = None,
                 q: float = 4.0) -> dict:
    """``L2``, ``H1`` and ``Lq`` errors of a P1 function against a smooth truth.

    ``exact(pts)`` and ``grad_exact(pts)`` are evaluated at the quadrature
    points of every cell, so the interpolation error is not hidden by
    supercloseness at the vertices.
    """
    bary, wts = _quadrature_rule(mesh.dim)
    pts = np.einsum("qi,cik->cqk", bary, mesh.vertices[mesh.cells])
    flat = pts.reshape(-1, mesh.dim)
    uh = np.einsum("qi,ci->cq", bary, np.asarray(u_full)[mesh.cells])
    diff = uh - np.asarray(exact(flat)).reshape(uh.shape)
    vol = mesh.volumes[:, None] * wts[None]
    l2 = float(np.sqrt(np.sum(vol * diff ** 2)))
    lq = float(np.sum(vol * np.abs(diff) ** q) ** (1.0 / q))
    out = {"L2": l2, "Lq": lq, "H1": np.nan}
    if grad_exact is not None:
        gh = np.einsum("ci,cik->ck", np.asarray(u_full)[mesh.cells], mesh.gradients)
        gd = gh[:, None, :] - np.asarray(grad_exact(flat)).reshape(pts.shape)
        out["H1"] = float(np.sqrt(l2 ** 2 + np.sum(vol * np.sum(gd ** 2, axis=2))))
    return out
