"""Domains, model sets and piecewise-affine bi-Lipschitz charts.

Charts are finite collections of affine pieces on closed polyhedral cells.
Matrices and offsets are held as exact :mod:`sympy` matrices (rationals and
surds such as ``sqrt(2)/2`` stay exact), so that volume preservation of a
piece can be decided without rounding. Evaluation uses cached float copies.

The explicit constructions provided here are

* ``rho1`` .. ``rho4`` and their composite, which maps the half cube with a
  half Neumann plate onto the half cube with a full Neumann plate;
* the corner transformations of the two crossing beams (shift, the
  two-piece fold ``phi_fold``, the two-piece map ``phi_unfold``);
* planar wedge flatteners used to build charts at edges and vertices of
  box-shaped domains.
"""

from __future__ import annotations

import enum
import itertools
import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
import sympy as sp
from scipy.optimize import linprog
from scipy.spatial import HalfspaceIntersection
from scipy.stats import qmc

from .errors import (
    NotSingularCornerError,
    OutOfRegionError,
    RegionMismatchError,
)

TOL = 1e-12


# ---------------------------------------------------------------------------
# sampling


def sobol(n: int, dim: int, seed: int = 0) -> np.ndarray:
    """First ``n`` points of a scrambled Sobol sequence in ``[0, 1)^dim``.

    The scrambled points are dyadic rationals, so scaling by powers of two
    and multiplying by small rational matrices is exact in floating point.
    """
    m = max(1, int(np.ceil(np.log2(max(n, 2)))))
    return qmc.Sobol(dim, scramble=True, seed=seed).random_base2(m)[:n]


# ---------------------------------------------------------------------------
# model sets


class ModelKind(enum.Enum):
    HALF_CUBE = "HALF_CUBE"
    HALF_CUBE_PLUS_PLATE = "HALF_CUBE_PLUS_PLATE"
    HALF_CUBE_PLUS_HALF_PLATE = "HALF_CUBE_PLUS_HALF_PLATE"


@dataclass(frozen=True)
class ModelSet:
    """One of the three local boundary configurations, scaled by ``scale``.

    ``K`` is the open cube ``(-1, 1)^d``; ``K-`` its part with ``x_d < 0``;
    the plate is ``K`` intersected with ``{x_d = 0}`` and the half plate
    additionally requires ``x_{d-1} < 0``.
    """

    kind: ModelKind
    scale: float = 1.0
    dim: int = 2

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("scale must be positive")
        if self.dim < 2:
            raise ValueError("dimension must be at least 2")

    def in_cube(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        return np.all(np.abs(pts) < self.scale, axis=1)

    def contains(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        cube = self.in_cube(pts)
        xd = pts[:, -1]
        lower = cube & (xd < 0)
        if self.kind is ModelKind.HALF_CUBE:
            return lower
        plate = cube & (xd == 0)
        if self.kind is ModelKind.HALF_CUBE_PLUS_HALF_PLATE:
            plate &= pts[:, -2] < 0
        return lower | plate


# ---------------------------------------------------------------------------
# polyhedra


class Polyhedron:
    """Closed polyhedron ``{x : normals @ x <= offsets}``."""

    def __init__(self, normals, offsets):
        self.normals = np.atleast_2d(np.asarray(normals, dtype=float))
        self.offsets = np.asarray(offsets, dtype=float).reshape(-1)
        if self.normals.shape[0] != self.offsets.shape[0]:
            raise ValueError("normals and offsets disagree in length")

    @property
    def dim(self) -> int:
        return self.normals.shape[1]

    @classmethod
    def box(cls, lo, hi) -> Polyhedron:
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        d = lo.size
        eye = np.eye(d)
        return cls(np.vstack([eye, -eye]), np.concatenate([hi, -lo]))

    @classmethod
    def whole(cls, dim: int) -> Polyhedron:
        return cls(np.zeros((0, dim)), np.zeros(0))

    def contains(self, pts, tol: float = 0.0) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if self.normals.shape[0] == 0:
            return np.ones(len(pts), dtype=bool)
        scale = np.maximum(1.0, np.abs(self.offsets))
        return np.all(pts @ self.normals.T <= self.offsets + tol * scale, axis=1)

    def intersect(self, other: Polyhedron) -> Polyhedron:
        return Polyhedron(
            np.vstack([self.normals, other.normals]),
            np.concatenate([self.offsets, other.offsets]),
        )

    def pullback(self, matrix, offset) -> Polyhedron:
        """Preimage under ``x -> matrix @ x + offset``."""
        matrix = np.asarray(matrix, dtype=float)
        offset = np.asarray(offset, dtype=float)
        return Polyhedron(self.normals @ matrix, self.offsets - self.normals @ offset)

    def image(self, matrix, offset) -> Polyhedron:
        """Image under the invertible map ``x -> matrix @ x + offset``."""
        inv = np.linalg.inv(np.asarray(matrix, dtype=float))
        return self.pullback(inv, -inv @ np.asarray(offset, dtype=float))

    def chebyshev(self, cap: float = 1.0):
        """Center and radius of the largest inscribed ball (radius capped)."""
        H, h = self.normals, self.offsets
        d = self.dim
        if H.shape[0] == 0:
            return np.zeros(d), cap
        norms = np.linalg.norm(H, axis=1)
        keep = norms > 0
        if np.any(~keep & (h < 0)):
            return None, -np.inf
        H, h, norms = H[keep], h[keep], norms[keep]
        A = np.hstack([H, norms[:, None]])
        c = np.zeros(d + 1)
        c[-1] = -1.0
        bounds = [(None, None)] * d + [(None, cap)]
        res = linprog(c, A_ub=A, b_ub=h, bounds=bounds, method="highs")
        if res.status != 0:
            return None, -np.inf
        return res.x[:d], res.x[-1]

    def is_full_dimensional(self, tol: float = 1e-9) -> bool:
        _, r = self.chebyshev()
        return r > tol

    def vertices(self) -> np.ndarray:
        center, r = self.chebyshev(cap=np.inf)
        if center is None or r <= 0:
            return np.zeros((0, self.dim))
        hs = np.hstack([self.normals, -self.offsets[:, None]])
        return HalfspaceIntersection(hs, center).intersections

    def bounding_box(self):
        v = self.vertices()
        return v.min(axis=0), v.max(axis=0)

    def sample(self, n: int, seed: int = 0) -> np.ndarray:
        """Quasi-random points inside a bounded polyhedron."""
        lo, hi = self.bounding_box()
        out = []
        k = 0
        need = n
        while need > 0 and k < 12:
            pts = lo + (hi - lo) * sobol(4 * n, self.dim, seed + k)
            pts = pts[self.contains(pts)]
            out.append(pts[:need])
            need -= len(out[-1])
            k += 1
        return np.vstack(out)

    def to_dict(self):
        return {"normals": self.normals.tolist(), "offsets": self.offsets.tolist()}

    @classmethod
    def from_dict(cls, data):
        d = len(data["normals"][0]) if data["normals"] else int(data.get("dim", 0))
        normals = np.asarray(data["normals"], dtype=float).reshape(-1, d)
        return cls(normals, data["offsets"])


# ---------------------------------------------------------------------------
# charts


def _exact(entries) -> sp.Matrix:
    return sp.Matrix(entries).applyfunc(sp.sympify)


def _is_exact(m: sp.Matrix) -> bool:
    return not any(isinstance(a, sp.Float) for e in m for a in sp.preorder_traversal(e))


@dataclass(eq=False)
class AffinePiece:
    """``x -> matrix @ x + offset`` on a closed polyhedral ``cell``."""

    cell: Polyhedron
    matrix: sp.Matrix
    offset: sp.Matrix

    def __post_init__(self):
        self.matrix = _exact(self.matrix)
        self.offset = _exact(self.offset).reshape(self.matrix.rows, 1)

    @cached_property
    def A(self) -> np.ndarray:
        return np.array(self.matrix.evalf(30).tolist(), dtype=float)

    @cached_property
    def c(self) -> np.ndarray:
        return np.array(self.offset.evalf(30).tolist(), dtype=float).reshape(-1)

    @cached_property
    def det(self):
        return sp.nsimplify(self.matrix.det()) if _is_exact(self.matrix) else self.matrix.det()

    @cached_property
    def det_deviation(self) -> float:
        """``| |det| - 1 |``; exactly zero for exact volume-preserving pieces."""
        if _is_exact(self.matrix):
            dev = sp.simplify(sp.Abs(self.matrix.det()) - 1)
            return 0.0 if dev == 0 else abs(float(dev))
        return abs(abs(float(np.linalg.det(self.A))) - 1.0)

    def apply(self, pts: np.ndarray) -> np.ndarray:
        return pts @ self.A.T + self.c

    def inverse(self) -> AffinePiece:
        inv = self.matrix.inv()
        return AffinePiece(
            self.cell.image(self.A, self.c),
            inv.applyfunc(sp.nsimplify if _is_exact(inv) else (lambda e: e)),
            (-inv * self.offset).applyfunc(sp.simplify),
        )


class Chart:
    """Continuous piecewise-affine map on the union of its pieces' cells.

    Points on shared faces are assigned to the lowest-indexed piece; the
    continuity invariant makes this harmless.
    """

    def __init__(self, pieces: Sequence[AffinePiece], name: str = ""):
        if not pieces:
            raise ValueError("a chart needs at least one piece")
        self.pieces = list(pieces)
        self.name = name
        self.dim = self.pieces[0].cell.dim

    def __repr__(self):
        return f"Chart({self.name!r}, {len(self.pieces)} pieces)"

    # -- construction ------------------------------------------------------

    @classmethod
    def affine(cls, matrix, offset=None, region: Polyhedron | None = None, name=""):
        matrix = _exact(matrix)
        d = matrix.rows
        offset = [0] * d if offset is None else offset
        region = Polyhedron.whole(d) if region is None else region
        return cls([AffinePiece(region, matrix, offset)], name=name)

    @classmethod
    def identity(cls, dim: int, region: Polyhedron | None = None, name="identity"):
        return cls.affine(sp.eye(dim), region=region, name=name)

    @classmethod
    def piecewise(cls, region: Polyhedron, cases, name=""):
        """Build from ``[(normals, offsets, matrix, offset), ...]`` within ``region``."""
        pieces = []
        for normals, offsets, matrix, offset in cases:
            cell = region.intersect(Polyhedron(normals, offsets)) if len(offsets) else region
            if cell.is_full_dimensional():
                pieces.append(AffinePiece(cell, matrix, offset))
        return cls(pieces, name=name)

    # -- evaluation --------------------------------------------------------

    def piece_index(self, pts, tol: float = TOL) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        idx = np.full(len(pts), -1)
        for k, piece in enumerate(self.pieces):
            free = idx < 0
            if not free.any():
                break
            hit = piece.cell.contains(pts[free], tol)
            sub = np.flatnonzero(free)[hit]
            idx[sub] = k
        return idx

    def __call__(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        single = pts.ndim == 1
        pts = np.atleast_2d(pts)
        idx = self.piece_index(pts)
        if np.any(idx < 0):
            bad = pts[idx < 0][0]
            raise OutOfRegionError(f"point {bad} lies outside chart {self.name!r}")
        out = np.empty_like(pts)
        for k in np.unique(idx):
            sel = idx == k
            out[sel] = self.pieces[k].apply(pts[sel])
        return out[0] if single else out

    @cached_property
    def _inverse(self) -> Chart:
        return Chart([p.inverse() for p in self.pieces], name=f"{self.name}^-1")

    def inverse(self) -> Chart:
        return self._inverse

    # -- geometric data ----------------------------------------------------

    @cached_property
    def lipschitz_bounds(self) -> tuple[float, float]:
        """(forward, inverse) Euclidean Lipschitz bounds: max piece norms."""
        fwd = max(np.linalg.norm(p.A, 2) for p in self.pieces)
        inv = max(np.linalg.norm(np.linalg.inv(p.A), 2) for p in self.pieces)
        return float(fwd), float(inv)

    @cached_property
    def sup_lipschitz_bounds(self) -> tuple[float, float]:
        fwd = max(np.abs(p.A).sum(axis=1).max() for p in self.pieces)
        inv = max(np.abs(np.linalg.inv(p.A)).sum(axis=1).max() for p in self.pieces)
        return float(fwd), float(inv)

    def det_deviation(self) -> float:
        return max(p.det_deviation for p in self.pieces)

    def is_bounded(self) -> bool:
        return all(p.cell.chebyshev(cap=np.inf)[1] < np.inf for p in self.pieces)

    # -- transformations ---------------------------------------------------

    def embed(self, leading: int, lo: float = -np.inf, hi: float = np.inf) -> Chart:
        """Extend by the identity in ``leading`` new leading coordinates."""
        pieces = []
        for p in self.pieces:
            H = np.hstack([np.zeros((p.cell.normals.shape[0], leading)), p.cell.normals])
            cell = Polyhedron(H, p.cell.offsets)
            if np.isfinite(lo) or np.isfinite(hi):
                box = Polyhedron.box([lo] * leading, [hi] * leading)
                pad = np.hstack([box.normals, np.zeros((2 * leading, self.dim))])
                cell = cell.intersect(Polyhedron(pad, box.offsets))
            m = sp.diag(sp.eye(leading), p.matrix)
            c = sp.Matrix.vstack(sp.zeros(leading, 1), p.offset)
            pieces.append(AffinePiece(cell, m, c))
        return Chart(pieces, name=f"{self.name}+{leading}")

    def restrict(self, region: Polyhedron) -> Chart:
        pieces = []
        for p in self.pieces:
            cell = p.cell.intersect(region)
            if cell.is_full_dimensional():
                pieces.append(AffinePiece(cell, p.matrix, p.offset))
        return Chart(pieces, name=self.name)

    def to_dict(self):
        return {
            "name": self.name,
            "dim": self.dim,
            "pieces": [
                {
                    "cell": p.cell.to_dict(),
                    "matrix": [[str(e) for e in p.matrix.row(i)] for i in range(p.matrix.rows)],
                    "offset": [str(e) for e in p.offset],
                }
                for p in self.pieces
            ],
        }

    @classmethod
    def from_dict(cls, data):
        pieces = []
        for pd in data["pieces"]:
            cell = pd["cell"]
            cell.setdefault("dim", data["dim"])
            pieces.append(
                AffinePiece(Polyhedron.from_dict(cell), pd["matrix"], pd["offset"])
            )
        return cls(pieces, name=data.get("name", ""))


def eval_chart(chart: Chart, p) -> np.ndarray:
    return chart(p)


def _full_dim_cells(cell: Polyhedron) -> bool:
    return cell.is_full_dimensional()


def compose_charts(a: Chart, b: Chart, check: bool = True) -> Chart:
    """Return ``b o a`` (apply ``a`` first) with cells refined by pullback."""
    if a.dim != b.dim:
        raise RegionMismatchError("charts have different dimensions")
    if check and a.is_bounded():
        for p in a.pieces:
            verts = p.apply(p.cell.vertices())
            if np.any(b.piece_index(verts, tol=1e-9) < 0):
                raise RegionMismatchError(
                    f"image of {a.name!r} leaves the region of {b.name!r}"
                )
    pieces = []
    for pa in a.pieces:
        for pb in b.pieces:
            cell = pa.cell.intersect(pb.cell.pullback(pa.A, pa.c))
            if _full_dim_cells(cell):
                m = pb.matrix * pa.matrix
                c = pb.matrix * pa.offset + pb.offset
                pieces.append(AffinePiece(cell, m.applyfunc(sp.nsimplify if _is_exact(m) else sp.simplify), c.applyfunc(sp.nsimplify if _is_exact(c) else sp.simplify)))
    if not pieces:
        raise RegionMismatchError("composition is empty")
    return Chart(pieces, name=f"{b.name}o{a.name}")


def compose(*charts: Chart) -> Chart:
    """``compose(c1, c2, c3)`` applies ``c1`` first."""
    out = charts[0]
    for c in charts[1:]:
        out = compose_charts(out, c)
    return out


# ---------------------------------------------------------------------------
# explicit maps from the half plate construction (planar)

_HALF = sp.Rational(1, 2)
_S2 = sp.sqrt(2)


def _mirror_case(normals, offsets, matrix, offset):
    """Conjugate a lower half plane case by ``(x, y) -> (x, -y)``."""
    R = np.diag([1.0, -1.0])
    Rs = sp.diag(1, -1)
    return (
        np.asarray(normals, dtype=float) @ R,
        offsets,
        Rs * _exact(matrix) * Rs,
        Rs * _exact(offset).reshape(2, 1),
    )


def rho1(box: float = 4.0) -> Chart:
    """Four-sector map on the lower half plane, mirrored to the upper one."""
    lower = [
        # x <= 0, y >= x, y <= 0  ->  (x - y/2, y/2)
        ([[1, 0], [1, -1], [0, 1]], [0, 0, 0], [[1, -_HALF], [0, _HALF]], [0, 0]),
        # x <= 0, y <= x  ->  (x/2, -x/2 + y)
        ([[1, 0], [-1, 1], [0, 1]], [0, 0, 0], [[_HALF, 0], [-_HALF, 1]], [0, 0]),
        # x >= 0, y <= -x  ->  (x/2, x/2 + y)
        ([[-1, 0], [1, 1], [0, 1]], [0, 0, 0], [[_HALF, 0], [_HALF, 1]], [0, 0]),
        # x >= 0, y >= -x, y <= 0  ->  (x + y/2, y/2)
        ([[-1, 0], [-1, -1], [0, 1]], [0, 0, 0], [[1, _HALF], [0, _HALF]], [0, 0]),
    ]
    cases = lower + [_mirror_case(*c) for c in lower]
    return Chart.piecewise(Polyhedron.box([-box] * 2, [box] * 2), cases, name="rho1")


def rho2(box: float = 8.0) -> Chart:
    cases = [
        ([[1, 0]], [0], [[1, 0], [1, 2]], [0, 1]),
        ([[-1, 0]], [0], [[1, 0], [-1, 2]], [0, 1]),
    ]
    return Chart.piecewise(Polyhedron.box([-box] * 2, [box] * 2), cases, name="rho2")


def rho3(box: float = 30.0) -> Chart:
    """Clockwise rotation by pi/4."""
    c = _S2 / 2
    return Chart.affine([[c, c], [-c, c]], region=Polyhedron.box([-box] * 2, [box] * 2), name="rho3")


def rho4(box: float = 45.0) -> Chart:
    return Chart.affine(
        [[_S2, 0], [0, 1 / _S2]], [0, -_HALF],
        region=Polyhedron.box([-box] * 2, [box] * 2), name="rho4",
    )


def half_plate_chart(dim: int = 2) -> Chart:
    """Volume-preserving map of ``K- u Sigma0`` onto ``K- u Sigma``.

    Planar composite ``rho4 o rho3 o rho2 o rho1``; for ``dim > 2`` the
    leading coordinates are carried along unchanged.
    """
    phi = compose(rho1(), rho2(), rho3(), rho4())
    phi.name = "half_plate"
    if dim > 2:
        phi = phi.embed(dim - 2, -4.0, 4.0)
        phi.name = "half_plate"
    return phi


# ---------------------------------------------------------------------------
# crossing beams

SING = ((-1, -1, 0), (-1, 1, 0), (1, -1, 0), (1, 1, 0))


def crossing_beams_contains(pts) -> np.ndarray:
    """Exact membership in the open union of the two beams and the plate."""
    p = np.atleast_2d(np.asarray(pts, dtype=float))
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    beam1 = (np.abs(x) < 10) & (np.abs(y) < 1) & (z > -2) & (z < 0)
    beam2 = (np.abs(x) < 1) & (np.abs(y) < 10) & (z > 0) & (z < 2)
    plate = (np.abs(x) < 1) & (np.abs(y) < 1) & (z == 0)
    return beam1 | beam2 | plate


def _box3(r):
    return Polyhedron.box([-r] * 3, [r] * 3)


def phi_fold(box: float = 50.0) -> Chart:
    """Fold in the ``(x, z)`` plane that leaves ``y`` unchanged.

    Reconstructed from the stated properties: the two affine maps agree on
    ``{z = x}``; in the plane ``y = 0`` the direction ``(0, 1)`` goes to
    ``(-1, 0)``, ``(-1, 0)`` goes to ``(0, -1)`` and ``(1, 0)`` is fixed
    (coordinates ``(x, z)``).
    """
    cases = [
        # z >= x: (x, y, z) -> (-z, y, x)
        ([[1, 0, -1]], [0], [[0, 0, -1], [0, 1, 0], [1, 0, 0]], [0, 0, 0]),
        # z <= x: (x, y, z) -> (x - 2z, y, z)
        ([[-1, 0, 1]], [0], [[1, 0, -2], [0, 1, 0], [0, 0, 1]], [0, 0, 0]),
    ]
    return Chart.piecewise(_box3(box), cases, name="phi_fold")


def phi_unfold(box: float = 150.0) -> Chart:
    """Linear map ``[[2,1,0],[-1,0,0],[0,0,1]]`` glued to the identity along ``{-x = y}``.

    The linear piece acts on ``{-x >= y}``; the identity on ``{-x <= y}``.
    """
    cases = [
        ([[1, 1, 0]], [0], [[2, 1, 0], [-1, 0, 0], [0, 0, 1]], [0, 0, 0]),
        ([[-1, -1, 0]], [0], sp.eye(3), [0, 0, 0]),
    ]
    return Chart.piecewise(_box3(box), cases, name="phi_unfold")


def quadrant_flattener(i: int, j: int, dim: int = 3, box: float = 500.0) -> Chart:
    """Map the quadrant ``{x_i > 0, x_j < 0}`` onto the half space ``{x_j < 0}``.

    Two shears glued along ``{x_i + x_j = 0}``; both have determinant one.
    """
    n_a = np.zeros(dim)
    n_a[[i, j]] = -1.0  # x_i + x_j >= 0
    A = sp.eye(dim)
    A[i, j] = 1
    B = sp.eye(dim)
    B[i, j] = 1
    B[j, i] = -1
    B[j, j] = 0
    cases = [([n_a], [0], A, [0] * dim), ([-n_a], [0], B, [0] * dim)]
    return Chart.piecewise(Polyhedron.box([-box] * dim, [box] * dim), cases, name=f"flat{i}{j}")


def reentrant_flattener(i: int, j: int, dim: int = 3, box: float = 500.0) -> Chart:
    """Map ``{x_i > 0} u {x_j < 0}`` (a 270 degree wedge) onto ``{x_j < 0}``.

    Quarter turn in the ``(x_i, x_j)`` plane followed by the planar part of
    :func:`phi_fold`.
    """
    R = sp.eye(dim)
    R[i, i], R[i, j], R[j, i], R[j, j] = 0, 1, -1, 0
    n1 = np.zeros(dim)
    n1[[i, j]] = [1.0, -1.0]  # x_j >= x_i
    F1 = sp.eye(dim)
    F1[i, i], F1[i, j], F1[j, i], F1[j, j] = 0, -1, 1, 0
    F2 = sp.eye(dim)
    F2[i, j] = -2
    region = Polyhedron.box([-box] * dim, [box] * dim)
    rot = Chart.affine(R, region=region, name="quarter")
    fold = Chart.piecewise(region.pullback(np.eye(dim), np.zeros(dim)),
                           [([n1], [0], F1, [0] * dim), ([-n1], [0], F2, [0] * dim)],
                           name="fold")
    out = compose_charts(rot, fold, check=False)
    out.name = f"reentrant{i}{j}"
    return out


def _signed_permutation(perm, signs) -> sp.Matrix:
    d = len(perm)
    P = sp.zeros(d, d)
    for r, (k, s) in enumerate(zip(perm, signs)):
        P[r, k] = s
    return P


def rigid_chart(center, perm=(0, 1, 2), signs=(1, 1, 1), box: float = 40.0) -> Chart:
    """``x -> P (x - center)`` with a signed permutation ``P``."""
    P = _signed_permutation(perm, signs)
    c = -P * _exact(list(center)).reshape(len(perm), 1)
    d = len(perm)
    return Chart.affine(P, c, region=Polyhedron.box([-box] * d, [box] * d), name="rigid")


def build_crossing_beams_chart(corner, flatten: bool = False) -> Chart:
    """Chart at one of the four singular corners of the crossing beams.

    Returns ``phi_unfold o phi_fold o shift`` (preceded by the reflection
    moving ``corner`` to ``(1, -1, 0)``). Near the corner the image of the
    domain is the convex wedge ``{0 < y, z < 0}``. With ``flatten=True`` a
    final quadrant flattener maps that wedge onto the half space ``{z < 0}``.
    """
    corner = tuple(int(round(v)) for v in np.asarray(corner, dtype=float))
    if corner not in SING or not np.allclose(corner, np.asarray(corner, dtype=float)):
        raise NotSingularCornerError(f"{corner} is not a singular corner")
    sx, sy = corner[0], -corner[1]
    reflect = Chart.affine(sp.diag(sx, sy, 1), region=_box3(20.0), name="reflect")
    shift = Chart.affine(sp.eye(3), [-1, 1, 0], region=_box3(20.0), name="shift")
    parts = [reflect, shift, phi_fold(), phi_unfold()]
    if flatten:
        parts.append(quadrant_flattener(1, 2))
    chart = compose(*parts)
    chart.name = f"corner{corner}"
    return chart


# ---------------------------------------------------------------------------
# atlases and presets


@dataclass
class BoundaryPatch:
    """A boundary point with a cubic neighbourhood of half width ``radius``."""

    center: tuple
    radius: float
    label: str = ""


@dataclass
class AtlasEntry:
    patch: BoundaryPatch
    chart: Chart
    target: ModelSet


@dataclass
class Atlas:
    domain_id: str
    entries: list[AtlasEntry]
    interior_cover: list[tuple] = field(default_factory=list)
    contains: Callable | None = None  # membership in Omega u Gamma

    def to_dict(self):
        return {
            "schema": 1,
            "domain_id": self.domain_id,
            "entries": [
                {
                    "patch": {"center": list(map(float, e.patch.center)),
                              "radius": e.patch.radius, "label": e.patch.label},
                    "chart": e.chart.to_dict(),
                    "target": {"kind": e.target.kind.value, "scale": e.target.scale,
                               "dim": e.target.dim},
                }
                for e in self.entries
            ],
            "interior_cover": [[list(map(float, lo)), list(map(float, hi))]
                               for lo, hi in self.interior_cover],
        }

    def dump(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def from_dict(cls, data, contains=None):
        entries = [
            AtlasEntry(
                BoundaryPatch(tuple(e["patch"]["center"]), e["patch"]["radius"],
                              e["patch"].get("label", "")),
                Chart.from_dict(e["chart"]),
                ModelSet(ModelKind(e["target"]["kind"]), e["target"]["scale"],
                         e["target"]["dim"]),
            )
            for e in data["entries"]
        ]
        cover = [(tuple(lo), tuple(hi)) for lo, hi in data.get("interior_cover", [])]
        return cls(data["domain_id"], entries, cover, contains)

    @classmethod
    def load(cls, path, contains=None):
        with open(path) as fh:
            return cls.from_dict(json.load(fh), contains)


def _power_of_two_below(x: float) -> float:
    return 2.0 ** np.floor(np.log2(x))


def local_entry(center, radius, chart, kind=ModelKind.HALF_CUBE, label="") -> AtlasEntry:
    """Atlas entry whose model-set scale fits inside the patch."""
    _, inv_sup = chart.sup_lipschitz_bounds
    scale = _power_of_two_below(radius / inv_sup)
    return AtlasEntry(BoundaryPatch(tuple(center), radius, label), chart,
                      ModelSet(kind, scale, chart.dim))


# canonical local configurations, all mapped onto {z < 0}
def _canonical_sets():
    def face(q):
        return q[:, 2] < 0

    def edge(q):
        return (q[:, 1] > 0) & (q[:, 2] < 0)

    def vertex(q):
        return (q[:, 0] > 0) & (q[:, 1] > 0) & (q[:, 2] < 0)

    def reentrant(q):
        return (q[:, 1] > 0) | (q[:, 2] < 0)

    return {"face": face, "edge": edge, "vertex": vertex, "reentrant": reentrant}


def _canonical_flattener(kind: str) -> Chart | None:
    if kind == "face":
        return None
    if kind == "edge":
        return quadrant_flattener(1, 2)
    if kind == "vertex":
        return compose(quadrant_flattener(1, 2), quadrant_flattener(0, 2, box=2000.0))
    if kind == "reentrant":
        return reentrant_flattener(1, 2)
    raise ValueError(kind)


_SIGNED_PERMS = [
    (perm, signs)
    for perm in itertools.permutations(range(3))
    for signs in itertools.product((1, -1), repeat=3)
]


def boxes_local_chart(contains, center, radius, kind, seed=0) -> Chart:
    """Chart at a non-singular boundary point of a union of boxes.

    Searches the 48 signed permutations for a rigid motion that brings the
    local configuration into the canonical form for ``kind``.
    """
    test = _canonical_sets()[kind]
    pts = np.asarray(center, dtype=float) + radius * (2 * sobol(512, 3, seed) - 1)
    inside = contains(pts)
    center = np.asarray(center, dtype=float)
    for perm, signs in _SIGNED_PERMS:
        P = np.zeros((3, 3))
        P[range(3), perm] = signs
        q = (pts - center) @ P.T
        if np.array_equal(test(q), inside):
            rigid = rigid_chart(center, perm, signs)
            flat = _canonical_flattener(kind)
            chart = rigid if flat is None else compose_charts(rigid, flat, check=False)
            chart.name = f"{kind}@{tuple(center.tolist())}"
            return chart
    raise ValueError(f"no {kind} configuration at {tuple(center)}")


# patch centres of the crossing beams by local configuration type
_BEAM_PATCHES = {
    "face": [(0, 0, -2), (5, 0, 0), (5, 1, -1), (10, 0, -1), (0, 0, 2), (0, 5, 0),
             (1, 5, 1), (0, 10, 1), (1, 0, 1), (1, 1, -1), (1, 1, 1), (-5, -1, -1)],
    "edge": [(10, 1, -1), (5, 1, 0), (5, 1, -2), (1, 5, 0), (1, 5, 2), (0, 10, 2),
             (-10, -1, -1), (-1, -5, 2)],
    "vertex": [(10, 1, 0), (10, 1, -2), (1, 10, 0), (1, 10, 2), (-10, -1, -2),
               (-1, -10, 2)],
    "reentrant": [(1, 0, 0), (0, 1, 0), (-1, 0, 0), (0, -1, 0)],
}


def crossing_beams_atlas(patch_radius: float = 0.25, corner_radius: float = 0.25) -> Atlas:
    entries = []
    for corner in SING:
        chart = build_crossing_beams_chart(corner, flatten=True)
        entries.append(local_entry(corner, corner_radius, chart, label="corner"))
    for kind, centers in _BEAM_PATCHES.items():
        for c in centers:
            chart = boxes_local_chart(crossing_beams_contains, c, patch_radius, kind)
            entries.append(local_entry(c, patch_radius, chart, label=kind))
    cover = [((-9.5, -0.5, -1.5), (9.5, 0.5, -0.5)), ((-0.5, -9.5, 0.5), (0.5, 9.5, 1.5)),
             ((-0.5, -0.5, -0.5), (0.5, 0.5, 0.5))]
    return Atlas("CROSSING_BEAMS", entries, cover, crossing_beams_contains)


def half_cube_contains(gamma: str, dim: int = 2):
    """Membership in ``K- u Gamma`` for ``gamma`` in {'none', 'plate', 'half_plate'}."""
    kind = {
        "none": ModelKind.HALF_CUBE,
        "plate": ModelKind.HALF_CUBE_PLUS_PLATE,
        "half_plate": ModelKind.HALF_CUBE_PLUS_HALF_PLATE,
    }[gamma]
    model = ModelSet(kind, 1.0, dim)
    return model.contains


def half_plate_atlas(dim: int = 2) -> Atlas:
    chart = half_plate_chart(dim)
    target = ModelSet(ModelKind.HALF_CUBE_PLUS_PLATE, 1.0, dim)
    entry = AtlasEntry(BoundaryPatch(tuple([0.0] * dim), 1.0, "global"), chart, target)
    lo = tuple([-0.5] * dim)
    hi = tuple([0.5] * (dim - 1) + [-0.25])
    return Atlas("HALF_CUBE_HALF_PLATE", [entry], [(lo, hi)], half_cube_contains("half_plate", dim))


def neumann_plate_atlas(dim: int = 2) -> Atlas:
    chart = Chart.identity(dim, Polyhedron.box([-4] * dim, [4] * dim))
    target = ModelSet(ModelKind.HALF_CUBE_PLUS_PLATE, 1.0, dim)
    entry = AtlasEntry(BoundaryPatch(tuple([0.0] * dim), 1.0, "global"), chart, target)
    return Atlas("HALF_CUBE_NEUMANN_PLATE", [entry], [], half_cube_contains("plate", dim))


# ---------------------------------------------------------------------------
# validation


@dataclass
class ValidationRow:
    chart_id: str
    check: str
    max_deviation: float
    passed: bool


@dataclass
class ValidationReport:
    rows: list[ValidationRow]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def failures(self):
        return [r for r in self.rows if not r.passed]

    def to_csv(self, path=None) -> str:
        lines = ["chart_id,check,max_deviation,pass"]
        for r in self.rows:
            lines.append(f"{r.chart_id},{r.check},{r.max_deviation:.17g},{'PASS' if r.passed else 'FAIL'}")
        text = "\n".join(lines) + "\n"
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def _shared_hyperplane(a: Polyhedron, b: Polyhedron):
    """A hyperplane ``n . x = t`` bounding ``a`` from above and ``b`` from below."""
    na = a.normals / np.maximum(np.linalg.norm(a.normals, axis=1), 1e-300)[:, None]
    nb = b.normals / np.maximum(np.linalg.norm(b.normals, axis=1), 1e-300)[:, None]
    ta = a.offsets / np.maximum(np.linalg.norm(a.normals, axis=1), 1e-300)
    tb = b.offsets / np.maximum(np.linalg.norm(b.normals, axis=1), 1e-300)
    for k in range(len(na)):
        match = np.all(np.abs(nb + na[k]) < 1e-12, axis=1) & (np.abs(tb + ta[k]) < 1e-12)
        if match.any():
            return na[k], ta[k]
    return None


def face_points(chart: Chart, n: int = 100, seed: int = 0):
    """Sample points on faces shared by pairs of pieces.

    Yields ``(i, j, points)``; points are convex combinations of extreme
    points of the common face, projected back onto its hyperplane.
    """
    rng = np.random.default_rng(seed)
    d = chart.dim
    for i, j in itertools.combinations(range(len(chart.pieces)), 2):
        ci, cj = chart.pieces[i].cell, chart.pieces[j].cell
        plane = _shared_hyperplane(ci, cj)
        if plane is None:
            continue
        inter = ci.intersect(cj)
        H, h = inter.normals, inter.offsets
        ext = []
        for _ in range(3 * d):
            c = rng.standard_normal(d)
            res = linprog(c, A_ub=H, b_ub=h, bounds=[(None, None)] * d, method="highs")
            if res.status == 0:
                ext.append(res.x)
            else:
                break
        if not ext:
            continue
        ext = np.array(ext)
        if np.ptp(ext, axis=0).max() < 1e-9:
            continue  # touching only at a point
        pts = rng.dirichlet(np.ones(len(ext)), size=n) @ ext
        nrm, t = plane
        pts -= np.outer(pts @ nrm - t, nrm)
        yield i, j, pts


def check_chart(chart: Chart, samples: int = 1000, seed: int = 0) -> dict:
    """Determinant, inverse-composition and continuity deviations."""
    inv = chart.inverse()
    residual = 0.0
    for k, p in enumerate(chart.pieces):
        pts = p.cell.sample(samples, seed + k)
        img = p.apply(pts)
        back = inv(img)
        scale = max(1.0, np.abs(pts).max())
        residual = max(residual, np.abs(back - pts).max() / scale)
    continuity = 0.0
    for i, j, pts in face_points(chart, 100, seed):
        a = chart.pieces[i].apply(pts)
        b = chart.pieces[j].apply(pts)
        continuity = max(continuity, np.abs(a - b).max() / max(1.0, np.abs(a).max()))
    return {
        "det": chart.det_deviation(),
        "inverse_residual": residual,
        "continuity": continuity,
    }


def membership_violations(entry: AtlasEntry, contains, samples: int, seed: int = 0):
    """Count points where ``x in Omega u Gamma`` and ``phi(x) in model`` disagree.

    Samples the target cube, its plate and the patch itself. Returns
    ``(count, max |y_d| over violating interior samples)``.
    """
    chart, target = entry.chart, entry.target
    d, a = chart.dim, target.scale
    inv = chart.inverse()
    cube = a * (2 * sobol(samples, d, seed) - 1)
    plate = a * (2 * sobol(samples, d, seed + 1) - 1)
    plate[:, -1] = 0.0
    ys = np.vstack([cube, plate])
    bad = contains(inv(ys)) != target.contains(ys)
    count = int(bad.sum())
    dist = float(np.abs(ys[bad, -1]).max()) if count else 0.0
    # forward direction from the patch
    c = np.asarray(entry.patch.center, dtype=float)
    xs = c + entry.patch.radius * (2 * sobol(samples, d, seed + 2) - 1)
    fx = chart(xs)
    inside = target.in_cube(fx)
    bad_f = inside & (contains(xs) != target.contains(fx))
    count += int(bad_f.sum())
    if bad_f.any():
        dist = max(dist, float(np.abs(fx[bad_f, -1]).max()))
    return count, dist


def empirical_lipschitz(chart: Chart, center, radius, pairs: int = 1000, seed: int = 0):
    d = chart.dim
    c = np.asarray(center, dtype=float)
    x = c + radius * (2 * sobol(pairs, d, seed + 3) - 1)
    y = c + radius * (2 * sobol(pairs, d, seed + 4) - 1)
    dx = np.linalg.norm(x - y, axis=1)
    keep = dx > 1e-9
    ratio = np.linalg.norm(chart(x[keep]) - chart(y[keep]), axis=1) / dx[keep]
    return float(ratio.min()), float(ratio.max())


def validate_atlas(atlas: Atlas, samples_per_chart: int = 1000, tol: float = 1e-12,
                   seed: int = 0) -> ValidationReport:
    """Check every atlas entry; failures are reported, never raised."""
    rows = []
    contains = atlas.contains
    for k, entry in enumerate(atlas.entries):
        cid = f"{k}:{entry.chart.name}"
        try:
            dev = check_chart(entry.chart, samples_per_chart, seed)
        except Exception as exc:  # report, do not throw
            rows.append(ValidationRow(cid, f"error:{type(exc).__name__}", np.inf, False))
            continue
        rows.append(ValidationRow(cid, "det", dev["det"], dev["det"] <= tol))
        rows.append(ValidationRow(cid, "inverse_residual", dev["inverse_residual"],
                                  dev["inverse_residual"] <= tol))
        rows.append(ValidationRow(cid, "continuity", dev["continuity"], dev["continuity"] <= tol))
        if contains is not None:
            count, dist = membership_violations(entry, contains, samples_per_chart, seed)
            rows.append(ValidationRow(cid, "membership_violations", float(count), count == 0))
            rows.append(ValidationRow(cid, "membership_distance", dist, count == 0))
        lo, hi = empirical_lipschitz(entry.chart, entry.patch.center, entry.patch.radius,
                                     samples_per_chart, seed)
        fwd, inv = entry.chart.lipschitz_bounds
        rows.append(ValidationRow(cid, "lipschitz_upper", hi, hi <= fwd * (1 + 1e-9)))
        rows.append(ValidationRow(cid, "lipschitz_lower", lo, lo >= (1 - 1e-9) / inv))
    if contains is not None:
        for k, (lo, hi) in enumerate(atlas.interior_cover):
            lo, hi = np.asarray(lo, float), np.asarray(hi, float)
            pts = lo + (hi - lo) * sobol(samples_per_chart, lo.size, seed + 7)
            miss = int((~contains(pts)).sum())
            rows.append(ValidationRow(f"interior{k}", "interior_cover", float(miss), miss == 0))
    return ValidationReport(rows)
