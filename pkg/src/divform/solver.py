"""Time stepping for ``(F(u))' - div G(u) mu grad u = R`` with mixed boundary data.

The equation is rewritten as ``u' + B(u) u = S(t, u)`` with

    B(u) = -div (G(u)/F'(u)) mu grad
    S(t, u) = R/F'(u) - grad(1/F'(u)) . (G(u) mu grad u)
              - Q(b(u))/F'(u) + Tr* g / F'(u)

and advanced by a frozen-coefficient implicit Euler step with optional
fixed-point refreshes. Note the minus sign in front of the gradient
correction: it follows from ``-w div X = -div(w X) + grad w . X``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from .assembly import DiscreteOperatorSet, assemble, cell_load_full, discrete_norms, stiffness_full
from .coefficients import BoundaryData, CoefficientField
from .errors import BlowUpError, DegenerateCoefficientError, StepRejectedError
from .mesh import FESpace, MeshBundle
from .nonlinearities import NonlinearityHandle, identity
from .spectral import CheckReport

COEFF_FLOOR = 1e-12


@dataclass
class ProblemSpec:
    """Data of the quasilinear problem on a fixed mesh.

    Parameters
    ----------
    mesh, mu, bd
        Geometry, coefficient and boundary data (``bd.kappa`` enters ``Q``,
        ``bd.g`` is the Neumann datum).
    F : NonlinearityHandle
        Positive with positive derivative.
    G : callable
        ``G(u_full)`` returning vertex values or a scalar.
    R : callable, optional
        ``R(t, u_full)`` returning densities on cells or vertices
        (see ``R_on``).
    b_linear, b_rest
        Boundary nonlinearity ``b(u) = b_linear * u + b_rest(u)``; the linear
        part is implicit, the rest explicit.
    u0 : array
        Initial dof vector.
    interval : (T0, T)
    q_exp, s_exp, varsigma
        Exponents carried for admissibility checks and diagnostics.
    """

    mesh: MeshBundle
    mu: CoefficientField
    F: NonlinearityHandle = field(default_factory=identity)
    G: Callable = field(default=lambda u: np.ones_like(u))
    R: Callable | None = None
    R_on: str = "cells"
    bd: BoundaryData = field(default_factory=BoundaryData)
    b_linear: float = 0.0
    b_rest: Callable | None = None
    u0: np.ndarray | None = None
    interval: tuple = (0.0, 1.0)
    q_exp: float = 4.0
    s_exp: float = 8.0
    varsigma: float = 0.5
    space: FESpace | None = None
    ops: DiscreteOperatorSet | None = None

    def __post_init__(self):
        if self.space is None:
            self.space = FESpace(self.mesh, self.bd.dirichlet_part)
        if self.ops is None:
            self.ops = assemble(self.mesh, self.space, self.mu, self.bd)
        if self.u0 is None:
            self.u0 = np.zeros(self.space.dimension)

    def validate(self):
        d = self.mesh.dim
        if not self.q_exp > d:
            raise ValueError(f"q = {self.q_exp} must exceed the dimension {d}")
        if not 0 < self.varsigma < 1:
            raise ValueError("varsigma must lie in (0, 1)")
        if not self.s_exp > 2.0 / (1.0 - self.varsigma):
            raise ValueError(f"s = {self.s_exp} must exceed 2/(1 - varsigma)")
        T0, T = self.interval
        if not T > T0:
            raise ValueError("empty time interval")
        u = self.space.expand(self.u0)
        if np.any(np.asarray(self.F.prime(u)) <= 0):
            raise DegenerateCoefficientError("F' is not positive at the initial value")
        if np.min(self.G(u)) <= 0:
            raise DegenerateCoefficientError("G is not positive at the initial value")
        return True


def _vertex_G(spec: ProblemSpec, u_full) -> np.ndarray:
    g = spec.G(u_full)
    return np.broadcast_to(np.asarray(g, dtype=float), u_full.shape)


def _weights(spec: ProblemSpec, u_full):
    fp = np.asarray(spec.F.prime(u_full), dtype=float)
    if np.any(~np.isfinite(fp)) or np.any(fp <= 0):
        raise DegenerateCoefficientError("F' is not positive")
    return fp


def coefficient_scale(spec: ProblemSpec, u_full) -> np.ndarray:
    """Cell averages of the vertex values of ``G(u)/F'(u)``."""
    ratio = _vertex_G(spec, u_full) / _weights(spec, u_full)
    xi = ratio[spec.mesh.cells].mean(axis=1)
    if not np.all(np.isfinite(xi)) or xi.min() < COEFF_FLOOR:
        raise DegenerateCoefficientError(f"coefficient scale {np.nanmin(xi)} below {COEFF_FLOOR}")
    return xi


def build_B(spec: ProblemSpec, u) -> sps.csr_matrix:
    """Stiffness of ``-div (G(u)/F'(u)) mu grad`` on the free dofs."""
    u_full = spec.space.expand(u)
    xi = coefficient_scale(spec, u_full)
    if np.all(xi == 1.0):
        return spec.ops.A0
    K = stiffness_full(spec.mesh, spec.ops.cell_mats, xi)
    f = spec.space.free
    return K[f][:, f].tocsr()


def _reaction_load(spec: ProblemSpec, t, u_full, w):
    if spec.R is None:
        return np.zeros(spec.mesh.nv)
    r = np.asarray(spec.R(t, u_full), dtype=float)
    if spec.R_on == "vertices":
        return spec.ops.M_full @ (r * w)
    wbar = w[spec.mesh.cells].mean(axis=1)
    return cell_load_full(spec.mesh, r * wbar)


def _p0_gradient(mesh: MeshBundle, v) -> np.ndarray:
    # differences to the first cell vertex: exactly zero for constant data
    loc = v[mesh.cells]
    return np.einsum("ci,cik->ck", loc[:, 1:] - loc[:, :1], mesh.gradients[:, 1:])


def gradient_product_density(spec: ProblemSpec, u_full, w=None) -> np.ndarray:
    """Cellwise ``grad(1/F'(u)) . (G(u) mu grad u)`` from P0 gradients of P1 data.

    ``G`` enters through its cell mean. For ``F = exp``, ``G = 1`` and
    ``mu = I`` this is ``-exp(-u) |grad u|^2`` (with ``u`` at the vertices
    averaged through ``1/F'``).
    """
    mesh = spec.mesh
    if w is None:
        w = 1.0 / _weights(spec, u_full)
    gu = _p0_gradient(mesh, u_full)
    gw = _p0_gradient(mesh, w)
    gbar = _vertex_G(spec, u_full)[mesh.cells].mean(axis=1)
    return gbar * np.einsum("ck,ckl,cl->c", gw, spec.ops.cell_mats, gu)


def gradient_correction(spec: ProblemSpec, u_full, w) -> np.ndarray:
    """Load vector of :func:`gradient_product_density`."""
    return cell_load_full(spec.mesh, gradient_product_density(spec, u_full, w))


def build_S(spec: ProblemSpec, t, u, include_linear_boundary: bool = False) -> np.ndarray:
    """Right-hand side ``S(t, u)`` as a load vector on the free dofs.

    The implicit linear boundary part ``b_linear * Q u / F'`` is excluded
    unless ``include_linear_boundary`` is set.
    """
    u_full = spec.space.expand(u)
    w = 1.0 / _weights(spec, u_full)
    load = _reaction_load(spec, t, u_full, w)
    load -= gradient_correction(spec, u_full, w)
    if spec.b_rest is not None:
        load -= w * (spec.ops.Q_full @ np.asarray(spec.b_rest(u_full), dtype=float))
    if include_linear_boundary and spec.b_linear:
        load -= w * (spec.ops.Q_full @ (spec.b_linear * u_full))
    load += w * spec.ops.g_full
    return load[spec.space.free]


def _linear_boundary(spec: ProblemSpec, u_full):
    if not spec.b_linear:
        return None
    w = 1.0 / _weights(spec, u_full)[spec.space.free]
    return sps.diags(w) @ (spec.b_linear * spec.ops.Q)


def check_umform(spec: ProblemSpec, u) -> dict:
    """Residual of the identity behind the reformulation, in discrete weak form.

    Left side: ``int G mu grad u . grad(w phi_i)`` with ``w = 1/F'(u)``,
    where the products ``G w`` and ``G phi_i`` of P1 functions are integrated
    exactly. Right side: ``B(u) u`` plus the P0 gradient-product load, i.e.
    exactly the discrete terms the solver assembles. Returns the dual
    (``H^{-1}``) norm and the max norm of the difference.
    """
    mesh = spec.mesh
    d = mesh.dim
    u_full = spec.space.expand(u)
    w = 1.0 / _weights(spec, u_full)
    Gv = _vertex_G(spec, u_full)
    xi = coefficient_scale(spec, u_full)
    gbar = Gv[mesh.cells].mean(axis=1)
    wbar = w[mesh.cells].mean(axis=1)
    dens = gradient_product_density(spec, u_full, w)
    corr = cell_load_full(mesh, dens)

    # int_T G w = |T| (xi + (d+1)/(d+2) (Gbar wbar - xi)) when xi = mean(G w)
    lhs_scale = xi + (d + 1) / (d + 2) * (gbar * wbar - xi)
    lhs = stiffness_full(mesh, spec.ops.cell_mats, lhs_scale) @ u_full + corr
    # int_T G phi_i = |T|/(d+1) (Gbar + (G_i - Gbar)/(d+2))
    extra = (Gv[mesh.cells] - gbar[:, None]) * (dens * mesh.volumes / ((d + 1) * (d + 2)))[:, None]
    lhs += np.bincount(mesh.cells.ravel(), extra.ravel(), minlength=mesh.nv)
    rhs = stiffness_full(mesh, spec.ops.cell_mats, xi) @ u_full + corr
    r = (lhs - rhs)[spec.space.free]
    return {"dual": discrete_norms(spec.ops, r, "H_minus1"), "max": float(np.abs(r).max(initial=0.0))}


def step(spec: ProblemSpec, t_k: float, u_k, dt: float, refreshes: int = 1, tol: float = 1e-3):
    """One frozen-coefficient implicit Euler step with fixed-point refreshes.

    Solves ``(M + dt (B(v) + Q_lin(v))) u = M u_k + dt S(t_k + dt, v)`` with
    ``v = u_k`` first and then ``v`` the latest iterate. Returns
    ``(u_next, info)``; raises ``StepRejectedError`` when the last refresh
    changes the iterate by more than ``tol`` (relative discrete L2).
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    M = spec.ops.M
    u_k = np.asarray(u_k, dtype=float)
    base = M @ u_k
    v = u_k
    change = 0.0
    xi_min = np.inf
    for it in range(refreshes + 1):
        v_full = spec.space.expand(v)
        xi_min = min(xi_min, float(coefficient_scale(spec, v_full).min()))
        K = M + dt * build_B(spec, v)
        ql = _linear_boundary(spec, v_full)
        if ql is not None:
            K = K + dt * ql
        rhs = base + dt * build_S(spec, t_k + dt, v)
        u_new = spla.spsolve(K.tocsc(), rhs)
        if not np.all(np.isfinite(u_new)):
            raise StepRejectedError("non-finite state")
        if it > 0:
            diff = discrete_norms(spec.ops, u_new - v, "L2")
            change = diff / max(1.0, discrete_norms(spec.ops, u_new, "L2"))
        v = u_new
    if refreshes and change > tol:
        raise StepRejectedError(f"fixed-point change {change:.3g} exceeds {tol:.3g}", change=change)
    return v, {"min_coefficient": xi_min, "residual": change}


def step_original(spec: ProblemSpec, t_k: float, u_k, dt: float):
    """Frozen-coefficient step of the untransformed equation (for comparison).

    ``(M diag(F'(u_k)) + dt A_G(u_k)) u = M diag(F'(u_k)) u_k + dt (R + Tr* g)``
    """
    u_full = spec.space.expand(u_k)
    fp = _weights(spec, u_full)[spec.space.free]
    Mf = spec.ops.M @ sps.diags(fp)
    gbar = _vertex_G(spec, u_full)[spec.mesh.cells].mean(axis=1)
    K = stiffness_full(spec.mesh, spec.ops.cell_mats, gbar)
    f = spec.space.free
    A = K[f][:, f]
    ones = np.ones(spec.mesh.nv)
    load = (_reaction_load(spec, t_k + dt, u_full, ones) + spec.ops.g_full)[f]
    return spla.spsolve((Mf + dt * A).tocsc(), Mf @ u_k + dt * load)


@dataclass
class Controls:
    dt_max: float = 0.1
    dt_min: float = 1e-8
    grow_after: int = 5
    refreshes: int = 1
    tol: float = 1e-3
    max_steps: int = 100000


@dataclass
class TimeSeries:
    times: list
    states: list
    diagnostics: list
    rejected: int = 0

    def to_csv(self) -> str:
        lines = ["time," + ",".join(f"u{i}" for i in range(len(self.states[0])))]
        for t, u in zip(self.times, self.states):
            lines.append(f"{t:.17g}," + ",".join(f"{x:.17g}" for x in u))
        return "\n".join(lines) + "\n"

    def diagnostics_csv(self) -> str:
        lines = ["step,t,dt,accepted,min_coefficient,residual"]
        for d in self.diagnostics:
            lines.append(f"{d['step']},{d['t']:.17g},{d['dt']:.17g},{int(d['accepted'])},"
                         f"{d['min_coefficient']:.17g},{d['residual']:.17g}")
        return "\n".join(lines) + "\n"


def solve(spec: ProblemSpec, dt_initial: float, controls: Controls | None = None) -> TimeSeries:
    """Adaptive march over ``spec.interval``.

    A rejected step halves ``dt``; ``grow_after`` consecutive accepted steps
    double it (capped at ``dt_max``). ``BlowUpError`` is raised once ``dt``
    would drop below ``dt_min``.
    """
    c = Controls() if controls is None else controls
    T0, T = spec.interval
    t = T0
    u = np.asarray(spec.u0, dtype=float).copy()
    dt = min(dt_initial, c.dt_max)
    series = TimeSeries([t], [u.copy()], [])
    streak = 0
    nstep = 0
    while t < T - 1e-14 * max(1.0, abs(T)):
        if nstep >= c.max_steps:
            raise BlowUpError("step budget exhausted", t=t)
        h = min(dt, T - t)
        try:
            u_new, info = step(spec, t, u, h, c.refreshes, c.tol)
        except StepRejectedError:
            series.rejected += 1
            streak = 0
            dt = h / 2
            if dt < c.dt_min:
                raise BlowUpError(f"step size fell below {c.dt_min} at t = {t}", t=t, series=series)
            continue
        nstep += 1
        t = T if T - (t + h) < 1e-14 * max(1.0, abs(T)) else t + h
        u = u_new
        series.times.append(t)
        series.states.append(u.copy())
        series.diagnostics.append({"step": nstep, "t": t, "dt": h, "accepted": True, **info})
        streak += 1
        if streak >= c.grow_after:
            dt = min(2 * dt, c.dt_max)
            streak = 0
    return series


def fixed_step_solve(spec: ProblemSpec, dt: float, refreshes: int = 1) -> TimeSeries:
    """March with a constant step and no acceptance test (convergence studies)."""
    T0, T = spec.interval
    n = int(round((T - T0) / dt))
    u = np.asarray(spec.u0, dtype=float).copy()
    series = TimeSeries([T0], [u.copy()], [])
    for k in range(n):
        t = T0 + k * dt
        u, info = step(spec, t, u, dt, refreshes, tol=np.inf)
        series.times.append(T0 + (k + 1) * dt)
        series.states.append(u.copy())
        series.diagnostics.append({"step": k + 1, "t": T0 + (k + 1) * dt, "dt": dt,
                                   "accepted": True, **info})
    return series


# ---------------------------------------------------------------------------
# Hoelder audit


def holder_quotients(series: TimeSeries, ops: DiscreteOperatorSet, beta: float = 0.5,
                     alpha: float = 0.5, space_times=None, chunk: int = 2048) -> dict:
    """Time quotient ``max ||u(t1)-u(t2)||_H1 / |t1-t2|^beta`` and the spatial
    quotient ``max |u(x)-u(y)| / |x-y|^alpha`` over vertex pairs."""
    times = np.asarray(series.times)
    U = np.array(series.states)
    tq = 0.0
    for i in range(len(times)):
        for j in range(i + 1, len(times)):
            diff = discrete_norms(ops, U[i] - U[j], "H1")
            tq = max(tq, diff / abs(times[i] - times[j]) ** beta)
    space = ops.space
    pts = space.mesh.vertices
    idx = range(len(times)) if space_times is None else space_times
    sq = 0.0
    for k in idx:
        u = space.expand(U[k])
        for a in range(0, len(pts), chunk):
            d = np.linalg.norm(pts[a:a + chunk, None, :] - pts[None, :, :], axis=2)
            du = np.abs(u[a:a + chunk, None] - u[None, :])
            with np.errstate(divide="ignore", invalid="ignore"):
                qv = np.where(d > 0, du / d ** alpha, 0.0)
            sq = max(sq, float(qv.max()))
    return {"time": tq, "space": sq}


def holder_audit(levels, beta: float = 0.5, alpha: float = 0.5, ratio_bound: float = 1.2,
                 space_times=None) -> CheckReport:
    """Compare Hoelder quotients of runs on consecutive refinement levels.

    ``levels`` is a list of ``(series, ops)``.
    """
    rep = CheckReport()
    vals = [holder_quotients(s, o, beta, alpha, space_times) for s, o in levels]
    for k, v in enumerate(vals):
        rep.add("holder_time", f"level={k};beta={beta}", v["time"], np.inf, True)
        rep.add("holder_space", f"level={k};alpha={alpha}", v["space"], np.inf, True)
    for k in range(1, len(vals)):
        for key in ("time", "space"):
            a, b = vals[k - 1][key], vals[k][key]
            r = max(a, b) / min(a, b) if min(a, b) > 0 else (1.0 if a == b else np.inf)
            rep.add(f"holder_{key}_ratio", f"levels={k - 1}->{k}", r, ratio_bound, r <= ratio_bound)
    rep.data["quotients"] = vals
    return rep


# ---------------------------------------------------------------------------
# manufactured solutions


@dataclass
class Manufactured:
    """Smooth truth ``u(t, x)`` with gradient and the matching source term."""

    u: Callable
    grad: Callable
    forcing: Callable
    name: str = "manufactured"


def exp_sine_manufactured() -> Manufactured:
    """``u = e^{-t} sin(pi x) sin(pi y)`` for ``(e^u)' - Laplace u = R``."""
    pi = np.pi

    def u(t, p):
        return np.exp(-t) * np.sin(pi * p[:, 0]) * np.sin(pi * p[:, 1])

    def grad(t, p):
        e = np.exp(-t) * pi
        return np.stack([e * np.cos(pi * p[:, 0]) * np.sin(pi * p[:, 1]),
                         e * np.sin(pi * p[:, 0]) * np.cos(pi * p[:, 1])], axis=1)

    def forcing(t, p):
        v = u(t, p)
        return -np.exp(v) * v + 2 * pi ** 2 * v

    return Manufactured(u, grad, forcing, "exp_sine")


def manufactured_problem(mesh: MeshBundle, truth: Manufactured, F: NonlinearityHandle,
                         interval=(0.0, 0.5)) -> ProblemSpec:
    """All-Dirichlet problem with ``G = 1``, ``mu = I`` and the truth's source."""
    pts = mesh.vertices
    bd = BoundaryData(dirichlet_part=frozenset(int(t) for t in np.unique(mesh.labels) if t >= 0))
    spec = ProblemSpec(mesh, CoefficientField.identity(mesh.dim), F=F, G=lambda u: np.ones_like(u),
                       R=lambda t, u: truth.forcing(t, pts), R_on="vertices", bd=bd, interval=interval)
    spec.u0 = spec.space.restrict(truth.u(interval[0], pts))
    return spec


def fit_rate(h, err) -> float:
    """Least-squares slope of ``log err`` against ``log h``."""
    h, err = np.asarray(h, dtype=float), np.asarray(err, dtype=float)
    return float(np.polyfit(np.log(h), np.log(err), 1)[0])


def space_convergence(mesh_factory, levels, truth: Manufactured, F: NonlinearityHandle,
                      interval=(0.0, 0.5), dt_scale: float = 0.25) -> dict:
    """Errors at the final time for ``dt = dt_scale * h^2`` on each level."""
    rows = []
    for n in levels:
        mesh = mesh_factory(n)
        spec = manufactured_problem(mesh, truth, F, interval)
        h = 1.0 / n
        steps = int(np.ceil((interval[1] - interval[0]) / (dt_scale * h * h)))
        series = fixed_step_solve(spec, (interval[1] - interval[0]) / steps)
        T = series.times[-1]
        from .assembly import exact_errors

        e = exact_errors(mesh, spec.space.expand(series.states[-1]), lambda p: truth.u(T, p),
                         lambda p: truth.grad(T, p), spec.q_exp)
        rows.append({"level": n, "h": h, **e})
    rates = {k: fit_rate([r["h"] for r in rows], [r[k] for r in rows]) for k in ("L2", "H1", "Lq")}
    return {"rows": rows, "rates": rates}


def time_convergence(spec: ProblemSpec, dts, ref_dt: float) -> dict:
    """``L2``-in-time errors against a reference run with step ``ref_dt``.

    Every ``dt`` must be an integer multiple of ``ref_dt``; the reference
    shares the mesh, so the spatial error cancels and only the time
    discretization is measured.
    """
    ref = fixed_step_solve(spec, ref_dt)
    rows = []
    for dt in dts:
        stride = int(round(dt / ref_dt))
        if abs(stride * ref_dt - dt) > 1e-12 * dt:
            raise ValueError(f"dt = {dt} is not a multiple of {ref_dt}")
        series = fixed_step_solve(spec, dt)
        e2 = sum(dt * discrete_norms(spec.ops, u - ref.states[k * stride], "L2") ** 2
                 for k, u in enumerate(series.states) if k > 0)
        rows.append({"dt": dt, "L2_time": float(np.sqrt(e2))})
    return {"rows": rows, "rate": fit_rate([r["dt"] for r in rows], [r["L2_time"] for r in rows])}
