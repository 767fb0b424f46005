"""Simplicial meshes with labelled facets and the P1 space on them.

Facet labels follow one integer convention throughout:
``0`` Dirichlet, positive values Neumann tags, negative values interface
tags (interior facets that carry surface data).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property
from math import factorial

import numpy as np
from scipy.spatial import cKDTree

from .errors import DimensionMismatchError, LabelError

DIRICHLET = 0


def simplex_volumes(points: np.ndarray, simplices: np.ndarray) -> np.ndarray:
    """Signed volumes of full-dimensional simplices."""
    X = points[simplices]
    T = X[:, 1:] - X[:, :1]
    d = points.shape[1]
    return np.linalg.det(T) / factorial(d)


def facet_measures(points: np.ndarray, facets: np.ndarray) -> np.ndarray:
    """(d-1)-dimensional measures of facets (Gram determinant)."""
    X = points[facets]
    E = X[:, 1:] - X[:, :1]
    k = E.shape[1]
    if k == 0:
        return np.ones(len(facets))
    gram = E @ np.swapaxes(E, 1, 2)
    return np.sqrt(np.maximum(np.linalg.det(gram), 0.0)) / factorial(k)


def _cell_facets(cells: np.ndarray) -> np.ndarray:
    d1 = cells.shape[1]
    out = []
    for k in range(d1):
        out.append(np.delete(cells, k, axis=1))
    return np.concatenate(out)  # ordered facet-major: facet k of every cell


class MeshBundle:
    """Simplicial mesh with labelled boundary and interface facets.

    Parameters
    ----------
    vertices : (nv, d) array
    cells : (nc, d+1) int array
        Orientation is normalised to positive volume on construction.
    facets : (nf, d) int array
    labels : (nf,) int array
    level : int
    """

    def __init__(self, vertices, cells, facets, labels, level: int = 0, name: str = ""):
        self.vertices = np.asarray(vertices, dtype=float)
        cells = np.array(cells, dtype=np.int64)
        vol = simplex_volumes(self.vertices, cells)
        flip = vol < 0
        cells[flip, 0], cells[flip, 1] = cells[flip, 1], cells[flip, 0].copy()
        self.cells = cells
        self.facets = np.asarray(facets, dtype=np.int64).reshape(-1, self.dim)
        self.labels = np.asarray(labels, dtype=np.int64).reshape(-1)
        self.level = level
        self.name = name
        if len(self.labels) != len(self.facets):
            raise LabelError("one label per facet required")

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def nv(self) -> int:
        return len(self.vertices)

    @property
    def nc(self) -> int:
        return len(self.cells)

    def __repr__(self):
        return f"MeshBundle({self.name!r}, d={self.dim}, nv={self.nv}, nc={self.nc})"

    @cached_property
    def volumes(self) -> np.ndarray:
        return simplex_volumes(self.vertices, self.cells)

    @cached_property
    def gradients(self) -> np.ndarray:
        """Barycentric gradients per cell, shape ``(nc, d+1, d)``."""
        X = self.vertices[self.cells]
        T = X[:, 1:] - X[:, :1]
        Ginv = np.linalg.inv(T)  # columns are gradients of lambda_1..lambda_d
        G = np.swapaxes(Ginv, 1, 2)
        g0 = -G.sum(axis=1, keepdims=True)
        return np.concatenate([g0, G], axis=1)

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.cells].mean(axis=1)

    @cached_property
    def h(self) -> float:
        X = self.vertices[self.cells]
        diam = 0.0
        for i, j in itertools.combinations(range(self.dim + 1), 2):
            diam = max(diam, np.linalg.norm(X[:, i] - X[:, j], axis=1).max())
        return float(diam)

    @cached_property
    def facet_measures(self) -> np.ndarray:
        return facet_measures(self.vertices, self.facets)

    @cached_property
    def _facet_table(self):
        all_f = np.sort(_cell_facets(self.cells), axis=1)
        uniq, inv, counts = np.unique(all_f, axis=0, return_inverse=True, return_counts=True)
        return uniq, inv.reshape(-1), counts

    def boundary_facets(self) -> np.ndarray:
        uniq, _, counts = self._facet_table
        return uniq[counts == 1]

    def validate(self):
        """Check orientation, conformity and labelling; raise on failure."""
        if np.any(self.volumes <= 1e-14 * self.h ** self.dim):
            raise LabelError("degenerate cell")
        uniq, _, counts = self._facet_table
        if np.any(counts > 2):
            raise LabelError("non-conforming mesh: facet shared by more than two cells")
        bnd = {tuple(f) for f in uniq[counts == 1]}
        labelled = {tuple(f): lab for f, lab in zip(np.sort(self.facets, axis=1), self.labels)}
        missing = bnd - set(labelled)
        if missing:
            raise LabelError(f"{len(missing)} boundary facets carry no label")
        for f, lab in labelled.items():
            if lab < 0 and f in bnd:
                raise LabelError("interface facet on the boundary")
            if lab >= 0 and f not in bnd:
                raise LabelError("boundary label on an interior facet")
        return True

    def facets_with(self, labels) -> np.ndarray:
        """Indices of facets whose label is in ``labels``."""
        labels = np.atleast_1d(np.asarray(list(labels) if isinstance(labels, (set, frozenset)) else labels))
        return np.flatnonzero(np.isin(self.labels, labels))

    @cached_property
    def _tree(self):
        return cKDTree(self.centroids)

    def locate(self, pts, k: int = 16, tol: float = 1e-10):
        """Cell index and barycentric coordinates of each point.

        Points outside the mesh get index -1.
        """
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        n = len(pts)
        kk = min(k, self.nc)
        _, cand = self._tree.query(pts, k=kk)
        cand = cand.reshape(n, kk)
        cell = np.full(n, -1)
        bary = np.zeros((n, self.dim + 1))
        X0 = self.vertices[self.cells[:, 0]]
        G = self.gradients
        for j in range(kk):
            todo = cell < 0
            if not todo.any():
                break
            c = cand[todo, j]
            lam = np.einsum("nij,nj->ni", G[c][:, 1:], pts[todo] - X0[c])
            lam = np.column_stack([1 - lam.sum(axis=1), lam])
            ok = np.all(lam >= -tol, axis=1)
            idx = np.flatnonzero(todo)[ok]
            cell[idx] = c[ok]
            bary[idx] = lam[ok]
        rest = np.flatnonzero(cell < 0)
        for i in rest:  # exhaustive fallback for unlucky points
            lam = np.einsum("nij,j->ni", G[:, 1:], pts[i] - X0)
            lam = np.column_stack([1 - lam.sum(axis=1), lam])
            hit = np.flatnonzero(np.all(lam >= -tol, axis=1))
            if len(hit):
                cell[i] = hit[0]
                bary[i] = lam[hit[0]]
        return cell, bary

    def interpolate(self, values: np.ndarray, pts) -> np.ndarray:
        """Evaluate a vertex-valued P1 function at ``pts``."""
        cell, bary = self.locate(pts)
        if np.any(cell < 0):
            raise DimensionMismatchError("points outside the mesh")
        return np.einsum("ni,ni->n", bary, values[self.cells[cell]])

    # -- file format -------------------------------------------------------

    def dumps(self) -> str:
        lines = [f"{self.dim} {self.nv} {self.nc} {len(self.facets)}"]
        lines += [" ".join(f"{x:.17g}" for x in v) for v in self.vertices]
        lines += [" ".join(str(i) for i in c) for c in self.cells]
        lines += [" ".join(str(i) for i in f) + f" {lab}" for f, lab in zip(self.facets, self.labels)]
        return "\n".join(lines) + "\n"

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.dumps())

    @classmethod
    def loads(cls, text: str, level: int = 0, name: str = ""):
        rows = [ln.split() for ln in text.strip().splitlines() if ln.strip()]
        d, nv, nc, nf = map(int, rows[0])
        verts = np.array(rows[1:1 + nv], dtype=float)
        cells = np.array(rows[1 + nv:1 + nv + nc], dtype=np.int64)
        frows = np.array(rows[1 + nv + nc:1 + nv + nc + nf], dtype=np.int64).reshape(nf, d + 1)
        return cls(verts, cells, frows[:, :d], frows[:, d], level, name)

    @classmethod
    def load(cls, path, level: int = 0):
        with open(path) as fh:
            return cls.loads(fh.read(), level, name=str(path))

    def to_vtk(self, point_data: dict | None = None) -> str:
        """Legacy ASCII VTK unstructured grid."""
        d = self.dim
        pts = self.vertices if d == 3 else np.column_stack([self.vertices, np.zeros(self.nv)])
        ctype = 10 if d == 3 else 5
        out = ["# vtk DataFile Version 3.0", self.name or "divform", "ASCII",
               "DATASET UNSTRUCTURED_GRID", f"POINTS {self.nv} double"]
        out += [" ".join(f"{x:.17g}" for x in p) for p in pts]
        out.append(f"CELLS {self.nc} {self.nc * (d + 2)}")
        out += [f"{d + 1} " + " ".join(map(str, c)) for c in self.cells]
        out.append(f"CELL_TYPES {self.nc}")
        out += [str(ctype)] * self.nc
        if point_data:
            out.append(f"POINT_DATA {self.nv}")
            for name, vals in point_data.items():
                out += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
                out += [f"{v:.17g}" for v in vals]
        return "\n".join(out) + "\n"


class FESpace:
    """Continuous P1 functions vanishing at vertices of Dirichlet facets."""

    def __init__(self, mesh: MeshBundle, dirichlet_labels=(DIRICHLET,)):
        self.mesh = mesh
        self.dirichlet_labels = frozenset(dirichlet_labels)
        fixed = np.zeros(mesh.nv, dtype=bool)
        sel = mesh.facets_with(self.dirichlet_labels)
        fixed[mesh.facets[sel].ravel()] = True
        self.fixed = fixed
        self.free = np.flatnonzero(~fixed)
        self.dof_map = np.full(mesh.nv, -1)
        self.dof_map[self.free] = np.arange(len(self.free))

    @property
    def dimension(self) -> int:
        return len(self.free)

    def __repr__(self):
        return f"FESpace({self.mesh.name!r}, dofs={self.dimension})"

    def expand(self, u, dirichlet_values=None) -> np.ndarray:
        """Vertex vector from a dof vector (full vectors pass through)."""
        u = np.asarray(u)
        if u.shape[0] == self.mesh.nv and self.dimension != self.mesh.nv:
            return u
        if u.shape[0] != self.dimension:
            raise DimensionMismatchError(f"vector of length {u.shape[0]}, space has {self.dimension} dofs")
        full = np.zeros((self.mesh.nv,) + u.shape[1:], dtype=u.dtype)
        if dirichlet_values is not None:
            full[self.fixed] = np.asarray(dirichlet_values)[self.fixed]
        full[self.free] = u
        return full

    def restrict(self, v) -> np.ndarray:
        v = np.asarray(v)
        if v.shape[0] == self.dimension:
            return v
        if v.shape[0] != self.mesh.nv:
            raise DimensionMismatchError("vector length matches neither dofs nor vertices")
        return v[self.free]

    def interpolate(self, fn) -> np.ndarray:
        """Dof vector of the nodal interpolant of ``fn(points)``."""
        return np.asarray(fn(self.mesh.vertices[self.free]), dtype=float)


# ---------------------------------------------------------------------------
# generators


def label_boundary(vertices, cells, label_fn, interface_fn=None):
    """Find boundary facets and label them with ``label_fn(facet_coords)``.

    ``label_fn`` receives an array ``(nf, d, d)`` of facet vertex coordinates
    and returns integer labels. ``interface_fn`` (optional) does the same for
    interior facets and returns a negative tag or 0 for "not an interface".
    """
    all_f = np.sort(_cell_facets(np.asarray(cells)), axis=1)
    uniq, counts = np.unique(all_f, axis=0, return_counts=True)
    bnd = uniq[counts == 1]
    labels = np.asarray(label_fn(vertices[bnd]), dtype=np.int64)
    facets, labs = [bnd], [labels]
    if interface_fn is not None:
        inner = uniq[counts == 2]
        tags = np.asarray(interface_fn(vertices[inner]), dtype=np.int64)
        keep = tags < 0
        facets.append(inner[keep])
        labs.append(tags[keep])
    return np.concatenate(facets), np.concatenate(labs)


def rectangle_mesh(x0, x1, y0, y1, nx, ny, diagonal="/"):
    """Structured triangle mesh of a rectangle.

    ``diagonal`` is ``"/"``, ``"\\"``, ``"x"`` (criss-cross) or a callable of
    the square centre returning one of ``"/"``, ``"\\"``.
    """
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    verts = [np.column_stack([X.ravel(), Y.ravel()])]

    def vid(i, j):
        return i * (ny + 1) + j

    cells = []
    extra = len(verts[0])
    centers = []
    for i in range(nx):
        for j in range(ny):
            a, b, c, d = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
            cx, cy = 0.5 * (xs[i] + xs[i + 1]), 0.5 * (ys[j] + ys[j + 1])
            kind = diagonal(cx, cy) if callable(diagonal) else diagonal
            if kind == "/":
                cells += [(a, b, c), (a, c, d)]
            elif kind == "\\":
                cells += [(a, b, d), (b, c, d)]
            elif kind == "x":
                m = extra + len(centers)
                centers.append((cx, cy))
                cells += [(a, b, m), (b, c, m), (c, d, m), (d, a, m)]
            else:
                raise ValueError(f"unknown diagonal {kind!r}")
    if centers:
        verts.append(np.array(centers))
    return np.vstack(verts), np.array(cells)


def _on(coords, axis, value, tol=1e-12):
    return np.all(np.abs(coords[..., axis] - value) < tol, axis=-1)


def _half_plate_diagonal(cx, cy):
    return "/" if cx < 0 else "\\"


def half_cube_mesh(n: int, gamma: str = "plate", level=None) -> MeshBundle:
    """Mesh of ``K- = (-1,1) x (-1,0)`` with mesh size ``1/n``.

    ``gamma`` selects the Neumann part of the top edge: ``"plate"`` (all
    of it, tag 1), ``"half_plate"`` (``x < 0`` only) or ``"none"``.
    Diagonals follow ``y = x`` for ``x < 0`` and ``y = -x`` for ``x > 0``.
    """
    verts, cells = rectangle_mesh(-1, 1, -1, 0, 2 * n, n, _half_plate_diagonal)

    def label(fc):
        lab = np.zeros(len(fc), dtype=np.int64)
        top = _on(fc, 1, 0.0)
        if gamma == "plate":
            lab[top] = 1
        elif gamma == "half_plate":
            lab[top & np.all(fc[..., 0] <= 0, axis=-1)] = 1
        return lab

    facets, labels = label_boundary(verts, cells, label)
    name = {"plate": "HALF_CUBE_NEUMANN_PLATE", "half_plate": "HALF_CUBE_HALF_PLATE",
            "none": "HALF_CUBE"}[gamma]
    return MeshBundle(verts, cells, facets, labels, n if level is None else level, name)


def unit_square_mixed_mesh(n: int, diagonal="/", dirichlet="left") -> MeshBundle:
    """Unit square, Dirichlet on ``x = 0``; Neumann tags 1 (``x = 1``), 2 (top/bottom).

    ``dirichlet="all"`` makes the whole boundary Dirichlet and
    ``dirichlet="none"`` the whole boundary Neumann (tag 1).
    """
    verts, cells = rectangle_mesh(0, 1, 0, 1, n, n, diagonal)

    def label(fc):
        if dirichlet == "all":
            return np.zeros(len(fc), dtype=np.int64)
        if dirichlet == "none":
            return np.ones(len(fc), dtype=np.int64)
        lab = np.full(len(fc), 2, dtype=np.int64)
        lab[_on(fc, 0, 1.0)] = 1
        lab[_on(fc, 0, 0.0)] = 0
        return lab

    facets, labels = label_boundary(verts, cells, label)
    return MeshBundle(verts, cells, facets, labels, n, "UNIT_SQUARE_MIXED")


# Kuhn subdivision of the unit cube into six tetrahedra along the main
# diagonal; it is conforming on any axis-aligned voxel grid.
_KUHN = [(0, 1, 3, 7), (0, 1, 5, 7), (0, 2, 3, 7), (0, 2, 6, 7), (0, 4, 5, 7), (0, 4, 6, 7)]


def voxel_mesh(lo, hi, shape, keep) -> tuple[np.ndarray, np.ndarray]:
    """Tetrahedral mesh of the voxels of a grid whose centres satisfy ``keep``."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    shape = np.asarray(shape)
    hs = (hi - lo) / shape
    idx = np.stack(np.meshgrid(*[np.arange(s) for s in shape], indexing="ij"), -1).reshape(-1, 3)
    centers = lo + (idx + 0.5) * hs
    idx = idx[keep(centers)]
    corners = np.array([[(k >> 2) & 1, (k >> 1) & 1, k & 1] for k in range(8)])
    node_idx = idx[:, None, :] + corners[None, :, :]
    dims = shape + 1
    flat = np.ravel_multi_index(node_idx.reshape(-1, 3).T, dims).reshape(-1, 8)
    used, inv = np.unique(flat, return_inverse=True)
    inv = inv.reshape(-1, 8)
    verts = lo + np.column_stack(np.unravel_index(used, dims)) * hs
    cells = np.concatenate([inv[:, list(t)] for t in _KUHN])
    return verts, cells


def crossing_beams_mesh(n: int, neumann_sides: bool = False) -> MeshBundle:
    """Voxel mesh of the crossing beams with mesh width ``1/n``.

    All boundary facets are Dirichlet unless ``neumann_sides`` is set, in
    which case only the four beam ends are Dirichlet.
    """
    from .geometry import crossing_beams_contains

    shape = (20 * n, 20 * n, 4 * n)
    verts, cells = voxel_mesh((-10, -10, -2), (10, 10, 2), shape, crossing_beams_contains)

    def label(fc):
        lab = np.zeros(len(fc), dtype=np.int64)
        if neumann_sides:
            ends = _on(fc, 0, 10.0) | _on(fc, 0, -10.0) | _on(fc, 1, 10.0) | _on(fc, 1, -10.0)
            lab[~ends] = 1
        return lab

    def interface(fc):
        # the plate separating the two beams
        on = _on(fc, 2, 0.0) & np.all(np.abs(fc[..., 0]) <= 1, axis=-1) & np.all(
            np.abs(fc[..., 1]) <= 1, axis=-1)
        return np.where(on, -1, 0)

    facets, labels = label_boundary(verts, cells, label, interface)
    return MeshBundle(verts, cells, facets, labels, n, "CROSSING_BEAMS")


def layered_prism_mesh(n: int) -> MeshBundle:
    """Prism over the triangle ``(0,0), (1,0), (0,1)`` with height 1.

    Each prism of the ``n x n x n`` subdivision is split into three
    tetrahedra by global vertex numbering, which keeps the split conforming.
    Bottom face ``z = 0`` is Dirichlet; the rest is Neumann tag 1. The
    plane ``z = 1/2`` is tagged as interface ``-1`` when it is a mesh plane.
    """
    tri_v = []
    index = {}
    for i in range(n + 1):
        for j in range(n + 1 - i):
            index[(i, j)] = len(tri_v)
            tri_v.append((i / n, j / n))
    tris = []
    for i in range(n):
        for j in range(n - i):
            tris.append((index[(i, j)], index[(i + 1, j)], index[(i, j + 1)]))
            if j + i + 1 < n:
                tris.append((index[(i + 1, j)], index[(i + 1, j + 1)], index[(i, j + 1)]))
    tri_v = np.array(tri_v)
    m = len(tri_v)
    verts = np.vstack([np.column_stack([tri_v, np.full(m, k / n)]) for k in range(n + 1)])
    cells = []
    for k in range(n):
        for t in tris:
            bottom = [v + k * m for v in t]
            top = [v + (k + 1) * m for v in t]
            order = np.argsort(bottom)
            b = [bottom[o] for o in order]
            tp = [top[o] for o in order]
            cells += [(b[0], b[1], b[2], tp[2]), (b[0], b[1], tp[1], tp[2]), (b[0], tp[0], tp[1], tp[2])]
    cells = np.array(cells)

    def label(fc):
        lab = np.ones(len(fc), dtype=np.int64)
        lab[_on(fc, 2, 0.0)] = 0
        return lab

    def interface(fc):
        return np.where(_on(fc, 2, 0.5), -1, 0)

    facets, labels = label_boundary(verts, cells, label, interface)
    return MeshBundle(verts, cells, facets, labels, n, "LAYERED_PRISM")


def reflect_mesh(mesh: MeshBundle, tol: float = 1e-12) -> tuple[MeshBundle, np.ndarray]:
    """Mirror a mesh of ``K-`` across ``{x_d = 0}`` to a mesh of ``K``.

    Facets on the plate become interior and are dropped; the other labels
    are mirrored. Returns the new mesh and, for every vertex of the new
    mesh, the index of its preimage vertex in ``mesh``.
    """
    V = mesh.vertices
    if np.any(V[:, -1] > tol):
        from .errors import AsymmetricMeshError

        raise AsymmetricMeshError("mesh does not lie in the lower half space")
    on_plate = np.abs(V[:, -1]) <= tol
    nv = mesh.nv
    mirror_ids = np.where(on_plate, np.arange(nv), nv + np.cumsum(~on_plate) - 1)
    mirrored = V[~on_plate].copy()
    mirrored[:, -1] *= -1
    verts = np.vstack([V, mirrored])
    cells = np.vstack([mesh.cells, mirror_ids[mesh.cells]])
    plate_facet = np.all(on_plate[mesh.facets], axis=1)
    keep = ~plate_facet
    facets = np.vstack([mesh.facets[keep], mirror_ids[mesh.facets[keep]]])
    labels = np.concatenate([mesh.labels[keep], mesh.labels[keep]])
    source = np.concatenate([np.arange(nv), np.flatnonzero(~on_plate)])
    out = MeshBundle(verts, cells, facets, labels, mesh.level, mesh.name + "_reflected")
    return out, source


def read_vector(path) -> np.ndarray:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    out = np.zeros(int(data[:, 0].max()) + 1 if len(data) else 0)
    out[data[:, 0].astype(int)] = data[:, 1]
    return out


def vector_csv(u) -> str:
    lines = ["dof,value"] + [f"{i},{v:.17g}" for i, v in enumerate(np.asarray(u, dtype=float))]
    return "\n".join(lines) + "\n"
