"""Piecewise-constant coefficient fields, their transformation and reflection."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CoefficientGapError,
    DomainNotHalfCubeError,
    LabelError,
    NonpositiveScaleError,
    RegionMismatchError,
)
from .geometry import Chart, Polyhedron

SYM_TOL = 1e-14


def _min_eig(m: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(m)[0])


def _max_eig(m: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(m)[-1])


class CoefficientField:
    """Symmetric positive definite matrices on polyhedral regions.

    Parameters
    ----------
    regions : list of Polyhedron
        Closed regions partitioning the domain up to shared faces. A point
        on a shared face takes the value of the first region containing it.
    matrices : list of array_like
        One symmetric ``d x d`` matrix per region.
    ellipticity : float, optional
        Declared lower bound. Defaults to the smallest eigenvalue found.
    upper_bound : float, optional
        Declared upper bound. Defaults to the largest eigenvalue found.
    labels : list of str, optional
    """

    def __init__(self, regions, matrices, ellipticity=None, upper_bound=None, labels=None):
        if len(regions) != len(matrices) or not regions:
            raise ValueError("need one matrix per region")
        self.regions = list(regions)
        self.matrices = [np.array(m, dtype=float) for m in matrices]
        self.dim = self.matrices[0].shape[0]
        for m in self.matrices:
            if m.shape != (self.dim, self.dim):
                raise ValueError("matrix shape does not match dimension")
            if np.abs(m - m.T).max() > SYM_TOL * max(1.0, np.abs(m).max()):
                raise ValueError("coefficient matrix is not symmetric")
        lo = min(_min_eig(m) for m in self.matrices)
        hi = max(_max_eig(m) for m in self.matrices)
        self.ellipticity = lo if ellipticity is None else float(ellipticity)
        self.upper_bound = hi if upper_bound is None else float(upper_bound)
        if self.ellipticity <= 0 or lo < self.ellipticity * (1 - 1e-12):
            raise ValueError(f"ellipticity bound {self.ellipticity} not satisfied (min eig {lo})")
        if hi > self.upper_bound * (1 + 1e-12):
            raise ValueError("upper bound not satisfied")
        self.labels = list(labels) if labels is not None else [f"r{k}" for k in range(len(regions))]

    def __repr__(self):
        return f"CoefficientField(d={self.dim}, {len(self.regions)} regions)"

    @classmethod
    def constant(cls, matrix, dim=None):
        matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        if matrix.size == 1 and dim is not None:
            matrix = matrix[0, 0] * np.eye(dim)
        return cls([Polyhedron.whole(matrix.shape[0])], [matrix])

    @classmethod
    def identity(cls, dim):
        return cls.constant(np.eye(dim))

    def region_index(self, pts, tol: float = 1e-12) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        idx = np.full(len(pts), -1)
        for k, reg in enumerate(self.regions):
            free = idx < 0
            if not free.any():
                break
            hit = reg.contains(pts[free], tol)
            idx[np.flatnonzero(free)[hit]] = k
        return idx

    def __call__(self, pts) -> np.ndarray:
        """Matrices at ``pts``, shape ``(n, d, d)``."""
        idx = self.region_index(pts)
        if np.any(idx < 0):
            raise CoefficientGapError("point outside every coefficient region")
        stack = np.stack(self.matrices)
        return stack[idx]

    def to_dict(self):
        return {
            "schema": 1,
            "dim": self.dim,
            "ellipticity": self.ellipticity,
            "upper_bound": self.upper_bound,
            "regions": [
                {"label": lab, "normals": r.normals.tolist(), "offsets": r.offsets.tolist(),
                 "matrix": m.tolist()}
                for lab, r, m in zip(self.labels, self.regions, self.matrices)
            ],
        }

    @classmethod
    def from_dict(cls, data):
        d = int(data["dim"])
        regions, mats, labels = [], [], []
        for r in data["regions"]:
            normals = np.asarray(r.get("normals", []), dtype=float).reshape(-1, d)
            regions.append(Polyhedron(normals, r.get("offsets", [])))
            mats.append(r["matrix"])
            labels.append(r.get("label", f"r{len(labels)}"))
        return cls(regions, mats, data.get("ellipticity"), data.get("upper_bound"), labels)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def loads(cls, text: str):
        return cls.from_dict(json.loads(text))


def transform_matrix(matrix: np.ndarray, jac: np.ndarray) -> np.ndarray:
    """``(1/|det J|) J m J^T``."""
    return jac @ matrix @ jac.T / abs(np.linalg.det(jac))


def pushforward(mu: CoefficientField, chart: Chart) -> CoefficientField:
    """Transformed coefficient on the image of the chart.

    Output regions are images of (piece cell) x (coefficient region)
    intersections; the ellipticity bound is recomputed from the new matrices.
    """
    if chart.dim != mu.dim:
        raise RegionMismatchError("dimension mismatch")
    for reg in mu.regions:
        if reg.chebyshev(cap=np.inf)[1] < np.inf:
            verts = reg.vertices()
            if np.any(chart.piece_index(verts, tol=1e-9) < 0):
                raise RegionMismatchError("chart region does not cover coefficient region")
    regions, mats, labels = [], [], []
    for k, p in enumerate(chart.pieces):
        for lab, reg, m in zip(mu.labels, mu.regions, mu.matrices):
            cell = p.cell.intersect(reg)
            if cell.is_full_dimensional():
                regions.append(cell.image(p.A, p.c))
                m2 = transform_matrix(m, p.A)
                mats.append(0.5 * (m2 + m2.T))
                labels.append(f"{lab}/{k}")
    if not regions:
        raise RegionMismatchError("chart and coefficient regions do not overlap")
    return CoefficientField(regions, mats, labels=labels)


def omega_minus(m: np.ndarray) -> np.ndarray:
    """Flip the sign of the mixed entries ``(j, d)`` and ``(d, j)``, ``j < d``."""
    s = np.ones(m.shape[0])
    s[-1] = -1.0
    return m * np.outer(s, s)


def reflect(mu: CoefficientField) -> CoefficientField:
    """Extend a coefficient on the lower half cube evenly to the full cube.

    Regions are clipped to ``K-``; their mirror images carry the matrices
    with flipped mixed entries.
    """
    d = mu.dim
    if d < 2:
        raise DomainNotHalfCubeError("reflection needs dimension at least 2")
    lower = Polyhedron.box([-1.0] * d, [1.0] * (d - 1) + [0.0])
    S = np.diag([1.0] * (d - 1) + [-1.0])
    regions, mats, labels = [], [], []
    for lab, reg, m in zip(mu.labels, mu.regions, mu.matrices):
        cell = reg.intersect(lower)
        if cell.is_full_dimensional():
            regions.append(cell)
            mats.append(m)
            labels.append(lab)
    for lab, reg, m in zip(mu.labels, mu.regions, mu.matrices):
        cell = reg.intersect(lower)
        if cell.is_full_dimensional():
            regions.append(cell.pullback(S, np.zeros(d)))
            mats.append(omega_minus(m))
            labels.append(lab + "^-")
    if not regions:
        raise DomainNotHalfCubeError("coefficient has no support in the lower half cube")
    return CoefficientField(regions, mats, mu.ellipticity, mu.upper_bound, labels)


@dataclass
class PiecewiseScalar:
    """Positive scalar field, constant on each of ``regions``."""

    regions: list
    values: list
    lower: float | None = None
    upper: float | None = None

    def __post_init__(self):
        self.values = [float(v) for v in self.values]
        if len(self.values) != len(self.regions):
            raise ValueError("need one value per region")
        if self.lower is None:
            self.lower = min(self.values)
        if self.upper is None:
            self.upper = max(self.values)
        if self.lower <= 0 or min(self.values) < self.lower:
            raise NonpositiveScaleError("scalar field is not bounded below by a positive number")


def scale_by(mu: CoefficientField, xi) -> CoefficientField:
    """Coefficient ``xi * mu``.

    ``xi`` is a positive number or a :class:`PiecewiseScalar`; the
    ellipticity of the result is ``lower(xi) * ellipticity(mu)``.
    """
    if np.isscalar(xi):
        if xi <= 0:
            raise NonpositiveScaleError(f"scale {xi} is not positive")
        return CoefficientField(mu.regions, [xi * m for m in mu.matrices],
                                xi * mu.ellipticity, xi * mu.upper_bound, mu.labels)
    regions, mats, labels = [], [], []
    for lab, reg, m in zip(mu.labels, mu.regions, mu.matrices):
        for k, (sreg, v) in enumerate(zip(xi.regions, xi.values)):
            cell = reg.intersect(sreg)
            if cell.is_full_dimensional():
                regions.append(cell)
                mats.append(v * m)
                labels.append(f"{lab}*{k}")
    if not regions:
        raise RegionMismatchError("scalar field and coefficient do not overlap")
    return CoefficientField(regions, mats, xi.lower * mu.ellipticity,
                            xi.upper * mu.upper_bound, labels)


@dataclass
class BoundaryData:
    """Robin coefficient and Neumann data on labelled boundary facets.

    ``kappa`` and ``g`` map positive (Neumann) facet tags to constants.
    Label 0 is always Dirichlet; additional Dirichlet tags may be listed.
    """

    kappa: dict = field(default_factory=dict)
    g: dict = field(default_factory=dict)
    dirichlet_part: frozenset = frozenset({0})

    def __post_init__(self):
        self.dirichlet_part = frozenset(self.dirichlet_part)
        for tag in list(self.kappa) + list(self.g):
            if tag in self.dirichlet_part or tag <= 0:
                raise LabelError(f"tag {tag} is not a Neumann tag")

    def kappa_of(self, tag) -> float:
        return float(self.kappa.get(tag, 0.0))

    def g_of(self, tag) -> float:
        return float(self.g.get(tag, 0.0))

    @property
    def zero_kappa(self) -> bool:
        return all(v == 0 for v in self.kappa.values())
