"""Spectral calculus of the discrete operator and numerical structure checks.

The discrete operator is ``B = M^{-1} (A0 + Q)`` acting on dof vectors;
functions of ``B`` are applied either through the full generalized
eigendecomposition (the reference oracle) or, for the inverse square root,
through Gauss-Legendre quadrature of the resolvent integral

    B^{-1/2} = (1/pi) int_0^inf t^{-1/2} (B + t)^{-1} dt.

Operator norms between weighted ``l^q`` spaces are estimated with Boyd's
power method from many fixed-seed starts; the reported numbers are lower
bounds of the true norms.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sps
import scipy.sparse.linalg as spla
from scipy.optimize import linprog

from .assembly import DiscreteOperatorSet, assemble
from .coefficients import BoundaryData, CoefficientField, pushforward, reflect
from .errors import (
    AsymmetricMeshError,
    IncompatibleMeshesError,
    MMatrixViolationError,
    SingularOperatorError,
    ZeroModeError,
)
from .geometry import Chart
from .mesh import FESpace, MeshBundle, reflect_mesh

MAX_DENSE = 5000


@dataclass
class CheckRow:
    check_id: str
    parameter: str
    value: float
    bound: float
    passed: bool


@dataclass
class CheckReport:
    """Rows of ``check_id, parameter, value, bound, pass`` plus raw data."""

    rows: list = field(default_factory=list)
    data: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def add(self, check_id, parameter, value, bound, passed):
        self.rows.append(CheckRow(check_id, str(parameter), float(value), float(bound), bool(passed)))

    def extend(self, other: "CheckReport"):
        self.rows.extend(other.rows)
        self.data.update(other.data)

    def to_csv(self) -> str:
        lines = ["check_id,parameter,value,bound,pass"]
        for r in self.rows:
            lines.append(f"{r.check_id},{r.parameter},{r.value:.17g},{r.bound:.17g},"
                         f"{'PASS' if r.passed else 'FAIL'}")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# eigen-based calculus


class SpectralBundle:
    """Generalized eigendecomposition of ``(A0 + Q, M)``.

    Parameters
    ----------
    ops : DiscreteOperatorSet
    mass : {"consistent", "lumped"}
    include_q : bool
        Add the Robin boundary mass to the stiffness.
    """

    def __init__(self, ops: DiscreteOperatorSet, mass: str = "consistent", include_q: bool = True):
        n = ops.n
        if n > MAX_DENSE:
            raise ValueError(f"{n} dofs exceed the dense eigensolver limit {MAX_DENSE}")
        self.ops = ops
        self.mass = mass
        A = ops.A0 + ops.Q if include_q else ops.A0
        self.A = A.tocsr()
        if mass == "lumped":
            self.Mmat = sps.diags(ops.ML).tocsr()
        else:
            self.Mmat = ops.M
        lam, V = sla.eigh(A.toarray(), self.Mmat.toarray())
        lam[np.abs(lam) < 1e-14 * max(1.0, abs(lam[-1]))] = 0.0
        self.eigenvalues = lam
        self.V = V

    @property
    def n(self) -> int:
        return len(self.eigenvalues)

    def check_invariants(self) -> dict:
        V, lam = self.V, self.eigenvalues
        ortho = np.abs(V.T @ (self.Mmat @ V) - np.eye(self.n)).max()
        resid = np.abs(self.A @ V - (self.Mmat @ V) * lam).max()
        return {"orthonormality": float(ortho), "residual": float(resid),
                "residual_bound": 1e-8 * float(lam[-1])}

    def coefficients(self, u):
        return self.V.T @ (self.Mmat @ u)

    def apply(self, symbol: Callable, u) -> np.ndarray:
        """``V symbol(lambda) V^T M u``; ``u`` may be a matrix of columns."""
        vals = symbol(self.eigenvalues)
        c = self.coefficients(u)
        c = vals[:, None] * c if c.ndim == 2 else vals * c
        return self.V @ c

    def _require_positive(self):
        if self.eigenvalues[0] <= 1e-12 * self.eigenvalues[-1]:
            raise ZeroModeError("operator has a zero mode; inverse roots are undefined")

    def sqrt(self, u):
        return self.apply(np.sqrt, u)

    def inv_sqrt(self, u):
        self._require_positive()
        return self.apply(lambda z: z ** -0.5, u)

    def imaginary_power(self, s: float, u):
        self._require_positive()
        return self.apply(lambda z: np.exp(1j * s * np.log(z)), u)

    def heat(self, t: float, u):
        return self.apply(lambda z: np.exp(-t * z), u)

    def resolvent(self, lam: float, u):
        return self.apply(lambda z: 1.0 / (z + lam), u)

    def save(self, path, level: int = 0):
        """ASCII eigendata: level, eigenvalues, row-major eigenvector matrix."""
        with open(path, "w") as fh:
            fh.write(f"{level} {self.n}\n")
            fh.write(" ".join(f"{x:.17g}" for x in self.eigenvalues) + "\n")
            for row in self.V:
                fh.write(" ".join(f"{x:.17g}" for x in row) + "\n")

    @staticmethod
    def load_arrays(path):
        with open(path) as fh:
            level, n = map(int, fh.readline().split())
            lam = np.array(fh.readline().split(), dtype=float)
            V = np.loadtxt(fh, ndmin=2)
        return level, lam, V.reshape(n, n)


# ---------------------------------------------------------------------------
# resolvent quadrature


def extreme_eigenvalues(A, M) -> tuple[float, float]:
    """Smallest and largest generalized eigenvalues of a sparse pair."""
    n = A.shape[0]
    if n <= 400:
        lam = sla.eigh(A.toarray(), M.toarray(), eigvals_only=True)
        return float(lam[0]), float(lam[-1])
    hi = spla.eigsh(A, k=1, M=M, which="LA", return_eigenvectors=False, tol=1e-8)[0]
    lo = spla.eigsh(A, k=1, M=M, sigma=0.0, which="LM", return_eigenvectors=False, tol=1e-10)[0]
    return float(lo), float(hi)


class BalakrishnanRoot:
    """Inverse square root of ``M^{-1} A`` by resolvent quadrature.

    The substitution ``t = lam_ref tan(theta)^2`` turns the integral into
    ``(2/pi) sqrt(lam_ref) int_0^{pi/2} sec(theta)^2 (B + t(theta))^{-1} d theta``
    with a smooth integrand; ``lam_ref`` is the geometric mean of the
    extreme eigenvalues. Every node costs one sparse factorisation, which is
    cached for repeated application.
    """

    def __init__(self, A, M, n_quad: int = 64, bounds=None):
        self.A = sps.csc_matrix(A)
        self.M = sps.csc_matrix(M)
        lo, hi = extreme_eigenvalues(self.A, self.M) if bounds is None else bounds
        if lo <= 1e-12 * hi:
            raise ZeroModeError("operator has a zero mode")
        self.lam_ref = float(np.sqrt(lo * hi))
        x, w = np.polynomial.legendre.leggauss(n_quad)
        theta = 0.25 * np.pi * (x + 1.0)
        self.t = self.lam_ref * np.tan(theta) ** 2
        self.w = 0.25 * np.pi * w * (2.0 / np.pi) * np.sqrt(self.lam_ref) / np.cos(theta) ** 2

    @cached_property
    def _solvers(self):
        return [spla.splu((self.A + t * self.M).tocsc()) for t in self.t]

    def inv_sqrt(self, u):
        rhs = self.M @ u
        out = np.zeros(np.shape(u))
        for w, lu in zip(self.w, self._solvers):
            out = out + w * lu.solve(rhs)
        return out

    @cached_property
    def _mass_lu(self):
        return spla.splu(self.M)

    def sqrt(self, u):
        return self._mass_lu.solve(self.A @ self.inv_sqrt(u))


def sqrt_apply(bundle: SpectralBundle, u, mode="EIGEN", n_quad: int = 64, inverse: bool = True):
    """Apply ``B^{-1/2}`` (``inverse=True``) or ``B^{1/2}``.

    ``mode`` is ``"EIGEN"`` or ``"BALAKRISHNAN"``; the latter uses
    ``n_quad`` Gauss-Legendre nodes.
    """
    if mode == "EIGEN":
        return bundle.inv_sqrt(u) if inverse else bundle.sqrt(u)
    if mode == "BALAKRISHNAN":
        lam = bundle.eigenvalues
        if lam[0] <= 1e-12 * lam[-1]:
            raise ZeroModeError("operator has a zero mode")
        root = BalakrishnanRoot(bundle.A, bundle.Mmat, n_quad, (lam[0], lam[-1]))
        return root.inv_sqrt(u) if inverse else root.sqrt(u)
    raise ValueError(f"unknown mode {mode!r}")


def balakrishnan_scalar(b: float, n_quad: int = 64, lam_ref: float | None = None) -> float:
    """Quadrature of ``(1/pi) int t^{-1/2} (b + t)^{-1} dt`` for a scalar ``b``."""
    lam_ref = b if lam_ref is None else lam_ref
    x, w = np.polynomial.legendre.leggauss(n_quad)
    theta = 0.25 * np.pi * (x + 1.0)
    t = lam_ref * np.tan(theta) ** 2
    f = (2.0 / np.pi) * np.sqrt(lam_ref) / np.cos(theta) ** 2 / (b + t)
    return float(0.25 * np.pi * np.sum(w * f))


def sqrt_agreement(bundle: SpectralBundle, n_vectors: int = 20, n_quad: int = 64, seed: int = 0):
    """Max relative M-norm gap between quadrature and eigen inverse roots."""
    rng = np.random.default_rng(seed)
    U = rng.standard_normal((bundle.n, n_vectors))
    U /= np.linalg.norm(U, axis=0)
    exact = bundle.inv_sqrt(U)
    quad = sqrt_apply(bundle, U, "BALAKRISHNAN", n_quad)
    diff = quad - exact
    Mm = bundle.Mmat
    num = np.sqrt(np.einsum("ij,ij->j", diff, Mm @ diff))
    den = np.sqrt(np.einsum("ij,ij->j", exact, Mm @ exact))
    return float(np.max(num / den))


# ---------------------------------------------------------------------------
# operator norms in weighted l^q


def _dual(y, q, groups: int = 1):
    """Duality map ``|y|^{q-2} y`` (Euclidean norm over blocks of ``groups`` rows)."""
    if groups == 1:
        mag = np.abs(y)
    else:
        mag = np.sqrt(np.sum(np.abs(y.reshape(-1, groups, y.shape[-1])) ** 2, axis=1))
        mag = np.repeat(mag, groups, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(mag > 0, mag ** (q - 2.0), 0.0)
    return scale * y


def _lq(y, q, groups: int = 1):
    if groups == 1:
        mag = np.abs(y)
    else:
        mag = np.sqrt(np.sum(np.abs(y.reshape(-1, groups, y.shape[-1])) ** 2, axis=1))
    return np.sum(mag ** q, axis=0) ** (1.0 / q)


def boyd_norm(apply, apply_adj, n: int, q: float, groups_out: int = 1, starts: int = 50,
              iters: int = 60, seed: int = 0, complex_ok: bool = False, rtol: float = 1e-10):
    """Lower bound of ``||T||`` from ``l^q`` to ``l^q`` (block-Euclidean in the output).

    Batch power method of Boyd on ``starts`` random vectors; ``apply`` and
    ``apply_adj`` act on column blocks.
    """
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, starts))
    if complex_ok:
        X = X + 1j * rng.standard_normal((n, starts))
    X /= _lq(X, q)
    qp = q / (q - 1.0)
    best = 0.0
    prev = -np.inf
    for _ in range(iters):
        Y = apply(X)
        vals = _lq(Y, q, groups_out)
        best = max(best, float(vals.max()))
        Z = apply_adj(_dual(Y, q, groups_out))
        X = _dual(Z, qp)
        nx = _lq(X, q)
        nx[nx == 0] = 1.0
        X = X / nx
        if abs(best - prev) <= rtol * best:
            break
        prev = best
    return best


# ---------------------------------------------------------------------------
# structure checks


def gradient_operator(ops: DiscreteOperatorSet, weight_q: float | None = None) -> sps.csr_matrix:
    """Sparse map from dofs to stacked cell gradients ``mu^{1/2} grad u``.

    With ``weight_q`` the rows of cell ``T`` are scaled by ``|T|^{1/q}``.
    """
    mesh = ops.space.mesh
    d = mesh.dim
    G = mesh.gradients  # (nc, d+1, d)
    mats = ops.cell_mats
    roots = np.stack([sla.sqrtm(m).real for m in mats]) if mats is not None else np.tile(np.eye(d), (mesh.nc, 1, 1))
    W = np.einsum("ckl,cjl->ckj", roots, G)  # (nc, d, d+1)
    if weight_q is not None:
        W = W * (mesh.volumes ** (1.0 / weight_q))[:, None, None]
    rows = np.repeat(np.arange(mesh.nc * d).reshape(mesh.nc, d, 1), d + 1, axis=2)
    cols = np.repeat(mesh.cells[:, None, :], d, axis=1)
    D = sps.csr_matrix((W.ravel(), (rows.ravel(), cols.ravel())), shape=(mesh.nc * d, mesh.nv))
    return D[:, ops.space.free].tocsr()


def riesz_norm(ops: DiscreteOperatorSet, q: float, starts: int = 50, seed: int = 0,
               include_q: bool = True) -> float:
    """Norm of ``u -> grad B^{-1/2} u`` from lumped ``L^q`` to cellwise ``L^q``.

    ``B = M_L^{-1}(A0 + Q)``; the gradient is weighted by ``mu^{1/2}``, so for
    ``q = 2`` and ``Q = 0`` the operator is an isometry.
    """
    ml = ops.ML
    A = (ops.A0 + ops.Q) if include_q else ops.A0
    s = 1.0 / np.sqrt(ml)
    C = (sps.diags(s) @ A @ sps.diags(s)).toarray()
    lam, W = sla.eigh(C)
    if lam[0] <= 1e-12 * lam[-1]:
        raise ZeroModeError("Riesz check needs a nonempty Dirichlet part")
    d = ops.space.mesh.dim
    D = gradient_operator(ops, weight_q=q)
    wq_in = ml ** (1.0 / q)
    root = lam ** -0.5

    def binv(X):  # B^{-1/2} = ML^{-1/2} W L^{-1/2} W^T ML^{1/2}
        return (s[:, None] * (W @ (root[:, None] * (W.T @ (X / s[:, None])))))

    def binv_t(X):  # transpose: ML^{1/2} W L^{-1/2} W^T ML^{-1/2}
        return (W @ (root[:, None] * (W.T @ (s[:, None] * X)))) / s[:, None]

    def apply(X):
        return D @ binv(X / wq_in[:, None])

    def apply_adj(Y):
        return binv_t(D.T @ Y) / wq_in[:, None]

    if q == 2:
        # exact: largest eigenvalue of the n x n Gram matrix T^T T
        T = binv(np.diag(1.0 / wq_in))
        gram = T.T @ (D.T @ (D @ T))
        return float(np.sqrt(sla.eigvalsh(0.5 * (gram + gram.T))[-1]))
    return boyd_norm(apply, apply_adj, ops.n, q, groups_out=d, starts=starts, seed=seed)


def riesz_bound_check(levels: list, q_exp: float, starts: int = 50, seed: int = 0,
                      ratio_bound: float = 1.1, label: str = "") -> CheckReport:
    """Riesz norms per level and level-to-level growth ratios."""
    rep = CheckReport()
    norms = []
    for k, ops in enumerate(levels):
        val = riesz_norm(ops, q_exp, starts, seed)
        norms.append(val)
        rep.add(f"riesz{label}", f"q={q_exp};level={k}", val, np.inf, True)
    for k in range(1, len(norms)):
        r = norms[k] / norms[k - 1]
        rep.add(f"riesz_ratio{label}", f"q={q_exp};levels={k - 1}->{k}", r, ratio_bound, r <= ratio_bound)
    rep.data["norms"] = norms
    return rep


def resolvent_norms(ops: DiscreteOperatorSet, lambdas, q_exp: float, starts: int = 50, seed: int = 0):
    """``(1 + lambda) ||(A + M(1 + lambda))^{-1} M||`` for each ``lambda``."""
    A = (ops.A0 + ops.Q).tocsc()
    M = ops.M.tocsc()
    out = []
    for lam in lambdas:
        K = (A + (1.0 + lam) * M).tocsc()
        try:
            lu = spla.splu(K)
        except RuntimeError as exc:
            raise SingularOperatorError("A + M(1 + lambda) is singular") from exc
        if q_exp == 2:
            # self-adjoint in the M inner product: norm = 1/(1 + lambda + lambda_1)
            lam1 = extreme_eigenvalues(A, M)[0]
            val = 1.0 / (1.0 + lam + lam1)
        else:
            w = ops.ML ** (1.0 / q_exp)

            def apply(X, lu=lu):
                return w[:, None] * lu.solve(M @ (X / w[:, None]))

            def apply_adj(Y, lu=lu):
                return (M @ lu.solve(w[:, None] * Y)) / w[:, None]

            val = boyd_norm(apply, apply_adj, ops.n, q_exp, starts=starts, seed=seed)
        out.append((1.0 + lam) * val)
    return np.array(out)


def resolvent_decay_check(ops: DiscreteOperatorSet, lambdas, q_exp: float, starts: int = 50,
                          seed: int = 0, label: str = "") -> CheckReport:
    rep = CheckReport()
    vals = resolvent_norms(ops, lambdas, q_exp, starts, seed)
    for lam, v in zip(lambdas, vals):
        rep.add(f"resolvent{label}", f"q={q_exp};lambda={lam:g}", v, np.inf, True)
    ratio = vals.max() / vals[0]
    rep.add(f"resolvent_sup{label}", f"q={q_exp}", ratio, 2.0, ratio < 2.0)
    rep.data["values"] = vals
    return rep


def obtuse_cells(ops: DiscreteOperatorSet) -> np.ndarray:
    """Cells whose local stiffness has a positive off-diagonal entry."""
    mesh = ops.space.mesh
    G = mesh.gradients
    mats = ops.cell_mats
    local = np.einsum("cik,ckl,cjl->cij", G, mats, G)
    off = local - np.einsum("cii->ci", local)[:, :, None] * np.eye(mesh.dim + 1)[None]
    return np.flatnonzero(off.max(axis=(1, 2)) > 1e-12)


def heat_kernel(ops: DiscreteOperatorSet, t: float, sources=None) -> np.ndarray:
    """Columns ``e^{-t M_L^{-1} A0} (e_j / m_j)`` by substepped implicit Euler."""
    ml = ops.ML
    A = ops.A0.tocsc()
    n = ops.n
    sources = np.arange(n) if sources is None else np.asarray(sources)
    if t == 0:
        K = np.zeros((n, len(sources)))
        K[sources, np.arange(len(sources))] = 1.0 / ml[sources]
        return K
    dmax = 1.0 / np.max(A.diagonal() / ml)
    steps = max(1, int(np.ceil(t / dmax)))
    delta = t / steps
    lu = spla.splu((sps.diags(ml) + delta * A).tocsc())
    U = np.zeros((n, len(sources)))
    U[sources, np.arange(len(sources))] = 1.0 / ml[sources]
    for _ in range(steps):
        U = lu.solve(ml[:, None] * U)
        if U.min() < -1e-10 * np.abs(U).max():
            raise MMatrixViolationError("implicit Euler produced negative kernel entries",
                                        cells=obtuse_cells(ops).tolist())
    return U


def fit_gaussian_envelope(records, d: int, epsilon: float = 0.0):
    """Fit ``log K <= log c - (d/2) log t - b r^2/t + epsilon t`` by LP.

    ``records`` holds rows ``(t, r^2, K)``. Minimises the total gap subject
    to the bound holding at every record, with ``b >= 0``.
    """
    t, r2, K = records.T
    y = np.log(K) + 0.5 * d * np.log(t) - epsilon * t
    x = r2 / t
    # variables: logc, b ; constraint logc - b x_i >= y_i
    A_ub = np.column_stack([-np.ones_like(x), x])
    b_ub = -y
    c = np.array([len(x), -x.sum()])
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=[(None, None), (0, None)], method="highs")
    logc, b = res.x
    resid = y - (logc - b * x)
    return float(np.exp(logc)), float(b), resid


def heat_kernel_check(ops: DiscreteOperatorSet, times, epsilon: float = 0.0,
                      max_sources: int = 64, seed: int = 0) -> CheckReport:
    """Positivity and Gaussian envelope of the lumped heat kernel."""
    if ops.Q.nnz and np.abs(ops.Q.data).max() > 0:
        raise ValueError("the heat kernel check requires kappa = 0")
    rep = CheckReport()
    mesh = ops.space.mesh
    pts = mesh.vertices[ops.space.free]
    rng = np.random.default_rng(seed)
    n = ops.n
    sources = np.sort(rng.choice(n, size=min(n, max_sources), replace=False))
    records = []
    min_entry = np.inf
    for t in times:
        K = heat_kernel(ops, t, sources)
        min_entry = min(min_entry, float(K.min()))
        rep.add("heat_min_entry", f"t={t:g}", K.min(), -1e-10, K.min() >= -1e-10)
        r2 = np.sum((pts[:, None, :] - pts[None, sources, :]) ** 2, axis=2)
        keep = K > 1e-12 * K.max()
        records.append(np.column_stack([np.full(keep.sum(), t), r2[keep], K[keep]]))
    records = np.vstack(records)
    c, b, resid = fit_gaussian_envelope(records, mesh.dim, epsilon)
    rep.add("heat_envelope_b", "b", b, 0.0, b > 0)
    rep.add("heat_envelope_c", "c", c, np.inf, np.isfinite(c))
    rep.add("heat_envelope_one_sided", "max(log K - fit)", resid.max(), 1e-9, resid.max() <= 1e-9)
    rep.data.update(c=c, b=b, min_entry=min_entry)
    return rep


def imaginary_power_check(bundle: SpectralBundle, s_values, q_exp: float, starts: int = 50,
                          seed: int = 0) -> CheckReport:
    """Discrete ``L^q`` norms of ``B^{is}`` and their exponential growth rate."""
    bundle._require_positive()
    rep = CheckReport()
    V, lam = bundle.V, bundle.eigenvalues
    Mm = bundle.Mmat
    w = bundle.ops.ML ** (1.0 / q_exp)
    logl = np.log(lam)
    norms = []
    for s in s_values:
        ph = np.exp(1j * s * logl)
        if q_exp == 2 and bundle.mass == "consistent":
            val = 1.0  # unitary in the M inner product; measured below in M-norm
            X = np.random.default_rng(seed).standard_normal((bundle.n, 4))
            Y = V @ (ph[:, None] * (V.T @ (Mm @ X)))
            val = float(np.max(np.sqrt(np.real(np.einsum("ij,ij->j", Y.conj(), Mm @ Y))
                                       / np.einsum("ij,ij->j", X, Mm @ X))))
        else:
            def apply(X, ph=ph):
                return w[:, None] * (V @ (ph[:, None] * (V.T @ (Mm @ (X / w[:, None])))))

            def apply_adj(Y, ph=ph):
                return (Mm @ (V @ (ph.conj()[:, None] * (V.T @ (Y * w[:, None]))))) / w[:, None]

            val = boyd_norm(apply, apply_adj, bundle.n, q_exp, starts=starts, seed=seed,
                            complex_ok=True)
        norms.append(val)
        rep.add("imag_power_norm", f"q={q_exp};s={s:g}", val, np.inf, True)
    s_abs = np.abs(np.asarray(s_values, dtype=float))
    A = np.column_stack([np.ones_like(s_abs), s_abs])
    coef = np.linalg.lstsq(A, np.log(norms), rcond=None)[0]
    theta = max(0.0, float(coef[1]))
    rep.add("imag_power_growth", f"q={q_exp}", theta, np.pi / 2, theta < np.pi / 2)
    rep.data.update(norms=norms, theta=theta)
    return rep


# ---------------------------------------------------------------------------
# transformation and reflection


def smooth_random_field(pts, rng, cutoff: Callable | None = None, modes: int = 3):
    """Random trigonometric polynomial of low degree, times ``cutoff``."""
    d = pts.shape[1]
    val = np.zeros(len(pts))
    for k in itertools.product(range(modes), repeat=d):
        a = rng.standard_normal()
        phase = rng.uniform(0, 2 * np.pi)
        val += a * np.cos(np.pi * np.asarray(k) @ pts.T / 2 + phase) / (1 + sum(k))
    if cutoff is not None:
        val *= cutoff(pts)
    return val


def transform_commutation(mu: CoefficientField, chart: Chart, mesh_a: MeshBundle,
                          mesh_b: MeshBundle, bd_a: BoundaryData | None = None,
                          bd_b: BoundaryData | None = None, n_vectors: int = 20,
                          seed: int = 0, cutoff: Callable | None = None) -> float:
    """Relative gap between the transformed and the direct inverse root.

    ``chart`` maps the domain of ``mesh_a`` onto that of ``mesh_b``. For a
    function ``u`` on ``B`` the inverse root on ``B`` (coefficient pushed
    forward) is compared with the inverse root on ``A`` of ``u o chart``,
    read back through the inverse chart by P1 interpolation. Returns the
    largest relative M-norm discrepancy over ``n_vectors`` fields.
    """
    bd_a = BoundaryData() if bd_a is None else bd_a
    bd_b = BoundaryData() if bd_b is None else bd_b
    sa, sb = FESpace(mesh_a, bd_a.dirichlet_part), FESpace(mesh_b, bd_b.dirichlet_part)
    ops_a = assemble(mesh_a, sa, mu, bd_a)
    ops_b = assemble(mesh_b, sb, pushforward(mu, chart), bd_b)
    bund_a, bund_b = SpectralBundle(ops_a), SpectralBundle(ops_b)
    fwd = chart(mesh_a.vertices)
    back = chart.inverse()(mesh_b.vertices)
    cell_b, bary_b = mesh_b.locate(fwd)
    cell_a, bary_a = mesh_a.locate(back)
    if np.any(cell_b < 0) or np.any(cell_a < 0):
        raise IncompatibleMeshesError("chart does not map the meshes onto each other")
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_vectors):
        ub_full = smooth_random_field(mesh_b.vertices, rng, cutoff)
        ub_full[sb.fixed] = 0.0
        ua_full = np.einsum("ni,ni->n", bary_b, ub_full[mesh_b.cells[cell_b]])
        wb = bund_b.inv_sqrt(ub_full[sb.free])
        wa = sa.expand(bund_a.inv_sqrt(ua_full[sa.free]))
        wa_on_b = np.einsum("ni,ni->n", bary_a, wa[mesh_a.cells[cell_a]])[sb.free]
        diff = wb - wa_on_b
        num = np.sqrt(diff @ (ops_b.M @ diff))
        den = np.sqrt(wb @ (ops_b.M @ wb))
        worst = max(worst, float(num / den))
    return worst


def transform_commutation_check(mu, chart, mesh_pairs, bd_a=None, bd_b=None, n_vectors=20,
                                seed=0, cutoff=None) -> CheckReport:
    """Discrepancies over a refinement sequence; PASS iff strictly decreasing."""
    rep = CheckReport()
    vals = []
    for k, (ma, mb) in enumerate(mesh_pairs):
        v = transform_commutation(mu, chart, ma, mb, bd_a, bd_b, n_vectors, seed, cutoff)
        vals.append(v)
        bound = vals[k - 1] if k else np.inf
        rep.add("transform_commutation", f"level={k};h={mb.h:.6g}", v, bound, v < bound)
    rep.data["discrepancies"] = vals
    return rep


def reflection_equivalence(mesh_minus: MeshBundle, mu: CoefficientField, loads, t_values,
                           plate_tag: int = 1):
    """Solve on ``K-`` (Neumann plate) and on the mirrored ``K``; compare.

    ``loads`` are vertex vectors on ``mesh_minus``. Returns the largest
    max-norm gap between the restricted full-cube solution and the
    half-cube solution, plus the largest solution magnitude.
    """
    if np.any(mesh_minus.vertices[:, -1] > 1e-12):
        raise AsymmetricMeshError("mesh is not contained in the lower half cube")
    plate = mesh_minus.facets_with([plate_tag])
    if not np.all(np.abs(mesh_minus.vertices[mesh_minus.facets[plate], -1]) <= 1e-12):
        raise AsymmetricMeshError("Neumann facets are not on the plate")
    full, source = reflect_mesh(mesh_minus)
    s_minus = FESpace(mesh_minus)
    s_full = FESpace(full)
    ops_m = assemble(mesh_minus, s_minus, mu)
    ops_f = assemble(full, s_full, reflect(mu))
    gap = 0.0
    scale = 0.0
    for f in loads:
        f_full = np.asarray(f)[source]
        rhs_m = ops_m.M_full @ f
        rhs_f = ops_f.M_full @ f_full
        for t in t_values:
            u = spla.spsolve((ops_m.A0 + t * ops_m.M).tocsc(), rhs_m[s_minus.free])
            uf = spla.spsolve((ops_f.A0 + t * ops_f.M).tocsc(), rhs_f[s_full.free])
            u_full = s_full.expand(uf)
            restricted = u_full[: mesh_minus.nv][s_minus.free]
            gap = max(gap, float(np.abs(restricted - u).max(initial=0.0)))
            scale = max(scale, float(np.abs(u).max(initial=0.0)))
    return gap, scale


def antisymmetric_response(mesh_minus: MeshBundle, mu: CoefficientField, load, t: float = 1.0):
    """Solve on ``K`` with an odd load; return (oddness defect, max on plate, max |u|)."""
    full, source = reflect_mesh(mesh_minus)
    space = FESpace(full)
    ops = assemble(full, space, reflect(mu))
    nv = mesh_minus.nv
    f = np.asarray(load)[source].astype(float)
    mirrored = np.arange(nv, full.nv)
    f[mirrored] *= -1.0
    on_plate = np.abs(full.vertices[:, -1]) <= 1e-12
    f[on_plate] = 0.0
    u = space.expand(spla.spsolve((ops.A0 + t * ops.M).tocsc(), (ops.M_full @ f)[space.free]))
    odd = u[mirrored] + u[source[mirrored]]
    return float(np.abs(odd).max()), float(np.abs(u[on_plate]).max()), float(np.abs(u).max())


def reflection_equivalence_check(mesh_minus, mu, loads, t_values, tol=1e-10) -> CheckReport:
    rep = CheckReport()
    gap, scale = reflection_equivalence(mesh_minus, mu, loads, t_values)
    rep.add("reflection_equivalence", f"h={mesh_minus.h:.6g}", gap, tol, gap <= tol)
    if loads:
        odd, plate, size = antisymmetric_response(mesh_minus, mu, loads[0])
        rep.add("reflection_antisymmetric", "oddness", odd, tol, odd <= tol * max(1.0, size))
        rep.add("reflection_antisymmetric", "plate", plate, tol, plate <= tol * max(1.0, size))
    rep.data.update(gap=gap, scale=scale)
    return rep
