import numpy as np
import pytest
import scipy.linalg as sla

from divform import nonlinearities as nl
from divform.assembly import discrete_norms
from divform.coefficients import BoundaryData, CoefficientField
from divform.errors import BlowUpError, DegenerateCoefficientError, StepRejectedError
from divform.geometry import Polyhedron
from divform.mesh import MeshBundle, crossing_beams_mesh, unit_square_mixed_mesh
from divform.solver import (
    Controls,
    ProblemSpec,
    TimeSeries,
    build_B,
    build_S,
    check_umform,
    exp_sine_manufactured,
    fixed_step_solve,
    gradient_product_density,
    holder_audit,
    holder_quotients,
    manufactured_problem,
    solve,
    step,
    step_original,
)

RNG = np.random.default_rng(12)


def _square(n=6, **kw):
    return ProblemSpec(unit_square_mixed_mesh(n), CoefficientField.identity(2), **kw)


def _twice(scale=2.0):
    return nl.custom(lambda u: scale * u, lambda u: scale + 0 * u)


def test_B_identity_problem_is_A0():
    spec = _square()
    assert build_B(spec, RNG.standard_normal(spec.space.dimension)) is spec.ops.A0


def test_B_phase_separation_is_bit_identical():
    F = nl.exponential()
    spec = _square(F=F, G=nl.derivative_of(F))
    for _ in range(10):
        B = build_B(spec, RNG.standard_normal(spec.space.dimension))
        assert (B != spec.ops.A0).nnz == 0


def test_B_halves_for_doubled_F():
    spec = _square(F=_twice())
    B = build_B(spec, RNG.standard_normal(spec.space.dimension)).toarray()
    assert np.allclose(B, 0.5 * spec.ops.A0.toarray(), rtol=1e-15, atol=1e-15)


def test_B_degenerate():
    spec = _square(G=lambda u: 0 * u)
    with pytest.raises(DegenerateCoefficientError):
        build_B(spec, np.zeros(spec.space.dimension))


def test_S_reaction_only():
    spec = _square(R=lambda t, u: np.full(spec.mesh.nc, 2.0))
    u = RNG.standard_normal(spec.space.dimension)
    S = build_S(spec, 0.0, u)
    ones = spec.space.expand(np.ones(spec.space.dimension), np.ones(spec.mesh.nv))
    assert S.sum() == pytest.approx(2.0 * (spec.ops.M_full @ ones)[spec.space.free].sum())


def test_S_gradient_term_vanishes_for_constants():
    spec = _square(F=nl.exponential())
    u = np.full(spec.space.dimension, 0.7)
    assert not gradient_product_density(spec, spec.space.expand(u, np.full(spec.mesh.nv, 0.7))).any()


def test_gradient_density_single_element():
    mesh = MeshBundle(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), np.array([[0, 1, 2]]),
                      np.array([[0, 1], [1, 2], [2, 0]]), np.array([1, 1, 1]))
    spec = ProblemSpec(mesh, CoefficientField.identity(2), F=nl.exponential(),
                       bd=BoundaryData(dirichlet_part=()))
    u = np.array([0.2, 1.0, -0.3])  # grad u = (0.8, -0.5)
    w = np.exp(-u)
    # 1/F' interpolated linearly on the element: grad w . grad u
    expected = (w[1] - w[0]) * 0.8 + (w[2] - w[0]) * (-0.5)
    assert gradient_product_density(spec, u)[0] == pytest.approx(expected, rel=1e-14)
    # first-order agreement with -e^{-u} |grad u|^2 at the centroid for small data
    small = 1e-3 * u
    dens = gradient_product_density(spec, small)[0]
    assert dens == pytest.approx(-np.exp(-small.mean()) * 0.89e-6, rel=1e-2)


def test_umform_zero_for_identity_and_constants():
    spec = _square(8, G=lambda u: 2 + np.sin(u))
    u = RNG.standard_normal(spec.space.dimension)
    assert check_umform(spec, u) == {"dual": 0.0, "max": 0.0}
    spec = _square(8, F=nl.exponential(), G=lambda u: 2 + np.sin(u))
    res = check_umform(spec, np.zeros(spec.space.dimension))
    assert res["max"] == 0.0


def test_umform_decreases_under_refinement():
    dual = []
    for n in (8, 16, 32):
        mesh = unit_square_mixed_mesh(n)
        spec = ProblemSpec(mesh, CoefficientField.identity(2), F=nl.exponential(), G=lambda u: 2 + np.sin(u))
        p = mesh.vertices
        u = spec.space.restrict(np.sin(np.pi * p[:, 0]) * np.cos(2 * p[:, 1]) + p[:, 0])
        dual.append(check_umform(spec, u)["dual"])
    assert dual[0] > dual[1] > dual[2] > 0


def test_zero_data_step_and_solve():
    spec = _square()
    u, info = step(spec, 0.0, np.zeros(spec.space.dimension), 0.1)
    assert not u.any() and info["residual"] == 0.0
    series = solve(spec, 0.1, Controls(dt_max=0.2))
    assert all(not s.any() for s in series.states)
    assert series.times[-1] == 1.0
    assert len(series.diagnostics) == len(series.times) - 1


def test_neumann_mean_conserved():
    mesh = unit_square_mixed_mesh(8, dirichlet="none")
    F = _twice(3.0)
    spec = ProblemSpec(mesh, CoefficientField.constant([[2.0, 0.3], [0.3, 1.0]]), F=F,
                       G=nl.derivative_of(F), bd=BoundaryData(dirichlet_part=()))
    u = RNG.standard_normal(spec.space.dimension)
    mass = spec.ops.M.sum(axis=0).A1
    m0 = mass @ u
    for k in range(5):
        u, _ = step(spec, 0.1 * k, u, 0.1)
        assert abs(mass @ u - m0) <= 1e-12 * max(1.0, abs(m0))


def test_eigenmode_single_step():
    spec = _square(8)
    lam, V = sla.eigh(spec.ops.A0.toarray(), spec.ops.M.toarray())
    v1 = V[:, 0]
    for dt in (0.01, 0.1, 1.0):
        u1, _ = step(spec, 0.0, v1, dt)
        assert np.abs(u1 - v1 / (1 + dt * lam[0])).max() <= 1e-10 * np.abs(v1).max()


def test_original_and_reformulated_agree_for_linear_F():
    spec = _square(8, G=lambda u: 1.5 + 0 * u, R=lambda t, u: np.ones(spec.mesh.nc))
    spec.bd = BoundaryData(g={1: 0.5})
    spec.ops = None
    spec.__post_init__()
    u = RNG.standard_normal(spec.space.dimension)
    for k in range(3):
        a, _ = step(spec, 0.1 * k, u, 0.1, refreshes=0)
        b = step_original(spec, 0.1 * k, u, 0.1)
        assert np.abs(a - b).max() <= 1e-12 * max(1.0, np.abs(b).max())
        u = a


def test_ramp_switch_no_rejections():
    spec = _square(6, interval=(0.0, 1.0))
    spec.R = lambda t, u: np.full(spec.mesh.nc, 1.0 if t < 0.5 else -2.0)
    series = solve(spec, 0.05, Controls(dt_max=0.05))
    assert series.rejected == 0
    assert series.times[-1] == 1.0
    assert np.all(np.isfinite(series.states[-1]))


def test_rejection_halves_and_blowup():
    spec = _square(4, F=nl.exponential(), R=lambda t, u: np.full(spec.mesh.nc, 50.0))
    with pytest.raises(BlowUpError):
        solve(spec, 0.5, Controls(dt_max=0.5, dt_min=0.2, tol=1e-12))
    with pytest.raises(StepRejectedError):
        step(spec, 0.0, np.zeros(spec.space.dimension), 0.5, tol=1e-12)


def test_rejected_steps_are_not_recorded():
    spec = _square(4, F=nl.exponential(), R=lambda t, u: np.full(spec.mesh.nc, 5.0), interval=(0.0, 0.4))
    series = solve(spec, 0.4, Controls(dt_max=0.4, tol=1e-3))
    assert series.rejected > 0
    assert len(series.diagnostics) == len(series.states) - 1
    assert np.all(np.diff(series.times) > 0)


def test_holder_examples():
    spec = _square(6)
    v = RNG.standard_normal(spec.space.dimension)
    const = TimeSeries([0.0, 0.5, 1.0], [v, v, v], [])
    assert holder_quotients(const, spec.ops)["time"] == 0.0
    times = [0.0, 0.25, 1.0]
    lin = TimeSeries(times, [t * v for t in times], [])
    expected = discrete_norms(spec.ops, v, "H1") * 1.0 ** 0.5
    assert holder_quotients(lin, spec.ops)["time"] == pytest.approx(expected, rel=1e-12)
    rep = holder_audit([(const, spec.ops), (const, spec.ops)])
    assert rep.passed


def test_validate_rules():
    spec = _square()
    assert spec.validate()
    spec.q_exp = 2.0
    with pytest.raises(ValueError):
        spec.validate()
    spec.q_exp, spec.s_exp = 4.0, 3.0
    with pytest.raises(ValueError):
        spec.validate()
    spec.s_exp, spec.varsigma = 8.0, 1.0
    with pytest.raises(ValueError):
        spec.validate()
    spec.varsigma, spec.G = 0.5, (lambda u: -np.ones_like(u))
    with pytest.raises(DegenerateCoefficientError):
        spec.validate()


def test_manufactured_start_and_short_run():
    mesh = unit_square_mixed_mesh(8, dirichlet="all")
    truth = exp_sine_manufactured()
    spec = manufactured_problem(mesh, truth, nl.exponential(), (0.0, 0.1))
    series = fixed_step_solve(spec, 0.01)
    u = spec.space.expand(series.states[-1])
    assert np.abs(u - truth.u(0.1, mesh.vertices)).max() < 0.05


def test_crossing_beams_run_with_jump():
    mesh = crossing_beams_mesh(1)
    n = np.array([[0.0, 0.0, 1.0]])
    mu = CoefficientField([Polyhedron(n, [0.0]), Polyhedron(-n, [0.0])], [np.eye(3), 3 * np.eye(3)])
    spec = ProblemSpec(mesh, mu, F=nl.exponential(), G=lambda u: 1 + 0.5 * np.tanh(u),
                       R=lambda t, u: np.ones(mesh.nc), interval=(0.0, 0.2))
    series = solve(spec, 0.05)
    assert series.times[-1] == pytest.approx(0.2)
    assert min(d["min_coefficient"] for d in series.diagnostics) > 0
