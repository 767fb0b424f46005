import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from divform import nonlinearities as nl
from divform.assembly import assemble
from divform.errors import AuxSingularError, EtaBoundsError, TimeOutOfRangeError
from divform.coefficients import BoundaryData, CoefficientField
from divform.mesh import FESpace, MeshBundle, label_boundary, rectangle_mesh, unit_square_mixed_mesh

# -Li_{3/2}(-e^t) at 40 digits, frozen
FD_REFERENCE = {
    -20.0: 2.0611536209365377e-09,
    -2.0: 0.12929851332007558,
    0.0: 0.765147024625408,
    1.0: 1.5756407761513003,
    5.0: 8.844208895242954,
    20.0: 67.49151222165892,
}


@pytest.mark.parametrize("t", sorted(FD_REFERENCE))
def test_fermi_dirac_frozen_values(t):
    assert nl.fermi_dirac_half(t) == pytest.approx(FD_REFERENCE[t], rel=1e-12)


def test_fermi_dirac_zero_closed_form():
    # (1 - 2^{-1/2}) zeta(3/2)
    assert nl.fermi_dirac_half(0.0) == pytest.approx((1 - 2 ** -0.5) * 2.612375348685488, rel=1e-14)


def test_fermi_dirac_derivative_by_differences():
    for t in (-3.0, 0.0, 2.5):
        h = 1e-5
        fd = (nl.fermi_dirac_half(t + h) - nl.fermi_dirac_half(t - h)) / (2 * h)
        assert nl.fermi_dirac_half_prime(t) == pytest.approx(fd, rel=1e-8)


def test_fermi_dirac_array_and_handle():
    F = nl.fermi_dirac()
    t = np.array([[-1.0, 0.0], [1.0, 2.0]])
    assert F(t).shape == (2, 2)
    assert np.all(F.prime(t) > 0) and np.all(F(t) > 0)


def test_handles_have_positive_derivatives():
    grid = np.linspace(-10, 10, 41)
    for name in ("exponential", "identity", "fermi_dirac_half"):
        assert np.all(nl.CATALOG[name]().prime(grid) > 0)


def test_derivative_of_gives_phase_separation_pair():
    F = nl.exponential()
    G = nl.derivative_of(F)
    u = np.linspace(-2, 2, 9)
    assert np.array_equal(G(u) / F.prime(u), np.ones_like(u))


def test_nonlocal_examples():
    mesh = unit_square_mixed_mesh(4, dirichlet="none")
    ops = assemble(mesh, FESpace(mesh, ()), CoefficientField.identity(2), BoundaryData(dirichlet_part=()))
    M = ops.M_full
    u = np.random.default_rng(0).standard_normal(mesh.nv)
    assert nl.nonlocal_G(u, lambda r: 2.5, np.ones(mesh.nv), M) == 2.5
    eta = lambda r: 1 + r / (1 + abs(r))  # noqa: E731
    assert nl.nonlocal_G(u, eta, np.zeros(mesh.nv), M) == eta(0.0)
    ones = np.ones(mesh.nv)
    assert nl.nonlocal_G(ones, eta, ones, M) == pytest.approx(eta(1.0), rel=1e-14)
    with pytest.raises(EtaBoundsError):
        nl.nonlocal_G(ones, eta, ones, M, bounds=(0.5, 1.2))


def test_nonlocal_lipschitz_bound():
    mesh = unit_square_mixed_mesh(4, dirichlet="none")
    M = assemble(mesh, FESpace(mesh, ()), CoefficientField.identity(2), BoundaryData(dirichlet_part=())).M_full
    phi = np.cos(mesh.vertices[:, 0])
    eta = lambda r: 1.5 + np.tanh(r) / 2  # noqa: E731  |eta'| <= 1/2
    rng = np.random.default_rng(1)
    L = 0.5 * np.linalg.norm(M @ phi)
    for _ in range(200):
        u, v = rng.standard_normal((2, mesh.nv))
        diff = abs(nl.nonlocal_G(u, eta, phi, M) - nl.nonlocal_G(v, eta, phi, M))
        assert diff <= L * np.linalg.norm(u - v) * (1 + 1e-12)


def test_piecewise_time_selection():
    pieces = nl.TimePieces([0.0, 0.5, 1.0], [lambda a, b: 0 * a + 1.0, lambda a, b: 0 * a + 2.0])
    assert pieces.select(0.0) == 0
    assert pieces.select(0.5) == 1  # half-open intervals
    assert pieces.select(1.0) == 1
    with pytest.raises(TimeOutOfRangeError):
        pieces.select(1.5)


def test_piecewise_time_gradient_examples():
    sq = lambda a, b: np.sum(b ** 2, axis=-1)  # noqa: E731
    pieces = nl.TimePieces([0.0, 1.0], [sq])
    mesh = unit_square_mixed_mesh(2)
    R = nl.piecewise_time_reaction(mesh, pieces)
    assert np.all(R(0.3, np.full(mesh.nv, 4.0)) == 0)
    # one element, u linear: a |b|^2 with the cell mean of u
    one = MeshBundle(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), np.array([[0, 1, 2]]),
                     np.array([[0, 1], [1, 2], [2, 0]]), np.array([1, 1, 1]))
    u = np.array([1.0, 3.0, 0.0])  # u = 1 + 2x - y
    Z = lambda a, b: a * np.sum(b ** 2, axis=-1)  # noqa: E731
    dens = nl.piecewise_time_reaction(one, nl.TimePieces([0.0, 1.0], [Z]))(0.0, u)
    assert dens[0] == pytest.approx(4 / 3 * 5)


def test_sampled_lipschitz_within_declared_constant():
    # Z(a, b) = sin(a) |b|^2 / 2 satisfies the inequality with L = 1
    Z = lambda a, b: np.sin(a) * np.sum(b ** 2, axis=-1) / 2  # noqa: E731
    assert nl.sampled_lipschitz(Z, 2.0, 3.0, 2, 1000, seed=4) <= 1.05


def test_thermistor_linear_potential():
    mesh = _tag_lr(rectangle_mesh(0, 2, 0, 1, 8, 4))
    aux = nl.AuxBoundary({1: lambda p: p[:, 0], 2: lambda p: p[:, 0]})
    R = nl.thermistor_R(np.zeros(mesh.nv), lambda v: np.ones_like(v), aux, mesh)
    assert np.allclose(R, 1.0, atol=1e-12)


def test_thermistor_constant_data_and_errors():
    mesh = _tag_lr(rectangle_mesh(0, 2, 0, 1, 6, 3))
    R = nl.thermistor_R(np.zeros(mesh.nv), lambda v: 1 + v ** 2, nl.AuxBoundary({1: 3.0, 2: 3.0}), mesh)
    assert np.abs(R).max() < 1e-20
    with pytest.raises(AuxSingularError):
        nl.thermistor_R(np.zeros(mesh.nv), lambda v: np.ones_like(v), nl.AuxBoundary({}), mesh)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_thermistor_nonnegative(seed):
    mesh = _tag_lr(rectangle_mesh(0, 2, 0, 1, 6, 3))
    v = np.random.default_rng(seed).standard_normal(mesh.nv)
    R = nl.thermistor_R(v, lambda x: 1 + x ** 2, nl.AuxBoundary({1: 0.0, 2: 1.0}), mesh)
    assert R.min() >= 0


def _tag_lr(grid):
    """Left edge tag 1, right edge tag 2, the rest tag 3."""
    verts, cells = grid
    lo, hi = verts[:, 0].min(), verts[:, 0].max()

    def label(fc):
        mid = fc.mean(axis=1)[:, 0]
        return np.where(np.isclose(mid, lo), 1, np.where(np.isclose(mid, hi), 2, 3))

    return MeshBundle(verts, cells, *label_boundary(verts, cells, label))
