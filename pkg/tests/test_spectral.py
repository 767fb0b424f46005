import numpy as np
import pytest
import scipy.sparse as sps

from divform.assembly import assemble
from divform.coefficients import BoundaryData, CoefficientField
from divform.errors import AsymmetricMeshError, ZeroModeError
from divform.geometry import Chart, Polyhedron
from divform.mesh import FESpace, crossing_beams_mesh, half_cube_mesh, unit_square_mixed_mesh
from divform.spectral import (
    BalakrishnanRoot,
    SpectralBundle,
    antisymmetric_response,
    balakrishnan_scalar,
    extreme_eigenvalues,
    heat_kernel,
    imaginary_power_check,
    reflection_equivalence,
    resolvent_norms,
    riesz_norm,
    sqrt_agreement,
    transform_commutation,
)


def _ops(mesh, dirichlet=(0,), mu=None, kappa=None):
    bd = BoundaryData(kappa or {}, {}, frozenset(dirichlet))
    return assemble(mesh, FESpace(mesh, bd.dirichlet_part), mu or CoefficientField.identity(mesh.dim), bd)


@pytest.fixture(scope="module")
def square():
    return _ops(unit_square_mixed_mesh(6))


def test_diagonal_pair_square_root():
    root = BalakrishnanRoot(sps.diags([1.0, 4.0]), sps.identity(2), 64)
    assert np.allclose(root.sqrt(np.eye(2)), np.diag([1.0, 2.0]), rtol=1e-8)
    assert np.allclose(root.inv_sqrt(np.eye(2)), np.diag([1.0, 0.5]), rtol=1e-8)


def test_scalar_balakrishnan():
    assert balakrishnan_scalar(4.0) == pytest.approx(0.5, abs=1e-10)


def test_balakrishnan_matches_eigen_on_beams():
    gap = sqrt_agreement(SpectralBundle(_ops(crossing_beams_mesh(1))), 20, 64, seed=1)
    assert gap <= 1e-6


def test_zero_mode_rejected():
    mesh = unit_square_mixed_mesh(3, dirichlet="none")
    b = SpectralBundle(_ops(mesh, dirichlet=()))
    with pytest.raises(ZeroModeError):
        b.inv_sqrt(np.ones(b.n))


def test_resolvent_symmetric_formula(square):
    lam1 = extreme_eigenvalues(square.A0, square.M)[0]
    vals = resolvent_norms(square, [0.0, 1.0, 10.0], 2.0)
    assert vals[0] == pytest.approx(1 / (1 + lam1))
    assert np.allclose(vals, [(1 + lam) / (1 + lam + lam1) for lam in (0.0, 1.0, 10.0)])
    assert np.all(vals <= 1)


def test_resolvent_q4_stable_across_refinements():
    sups = []
    for n in (4, 8, 16):
        ops = _ops(unit_square_mixed_mesh(n))
        sups.append(resolvent_norms(ops, [0, 1, 10, 100, 1000], 4.0, starts=10).max())
    assert max(sups) / min(sups) < 2


def test_riesz_q2_is_one():
    assert riesz_norm(_ops(half_cube_mesh(4, "half_plate")), 2.0) == pytest.approx(1.0, abs=1e-10)


def test_heat_kernel_identity_and_mass():
    mesh = unit_square_mixed_mesh(6, dirichlet="none")
    ops = _ops(mesh, dirichlet=())
    K0 = heat_kernel(ops, 0.0, [0, 5])
    assert np.allclose(K0 * ops.ML[:, None], np.eye(ops.n)[:, [0, 5]])
    for t in (0.01, 0.3):
        K = heat_kernel(ops, t, [0, 5, 17])
        assert np.allclose(ops.ML @ K, 1.0, atol=1e-13)
        assert K.min() >= 0


def test_imaginary_powers_q2_unitary_and_s0_identity(square):
    b = SpectralBundle(square)
    rep = imaginary_power_check(b, [0.0, 1.0, -2.0], 2.0)
    assert np.allclose(rep.data["norms"], 1.0, atol=1e-12)
    rep4 = imaginary_power_check(b, [0.0], 4.0, starts=10)
    assert rep4.data["norms"][0] == pytest.approx(1.0, abs=1e-9)


def test_transform_identity_and_permutation():
    mesh = unit_square_mixed_mesh(6, dirichlet="all")
    mu = CoefficientField.constant([[2.0, 0.3], [0.3, 1.0]])
    cut = lambda p: np.sin(np.pi * p[:, 0]) * np.sin(np.pi * p[:, 1])  # noqa: E731
    ident = Chart.identity(2, Polyhedron.box([-3, -3], [3, 3]))
    bd = BoundaryData(dirichlet_part={0, 1, 2})
    assert transform_commutation(mu, ident, mesh, mesh, bd, bd, cutoff=cut) == 0.0
    perm = Chart.affine([[0, 1], [1, 0]], region=Polyhedron.box([-3, -3], [3, 3]))
    assert transform_commutation(CoefficientField.identity(2), perm, mesh, mesh, bd, bd, cutoff=cut) <= 1e-12


def test_reflection_zero_load_and_constant_load():
    mesh = half_cube_mesh(4, "plate")
    gap, _ = reflection_equivalence(mesh, CoefficientField.identity(2), [np.zeros(mesh.nv)], [1.0])
    assert gap == 0.0
    gap, scale = reflection_equivalence(mesh, CoefficientField.identity(2), [np.ones(mesh.nv)], [1.0])
    assert gap <= 1e-10 * max(scale, 1.0)


def test_reflection_rejects_asymmetric_input():
    with pytest.raises(AsymmetricMeshError):
        reflection_equivalence(unit_square_mixed_mesh(3), CoefficientField.identity(2), [np.zeros(16)], [1.0])


def test_antisymmetric_load_gives_odd_solution():
    mesh = half_cube_mesh(8, "plate")
    rng = np.random.default_rng(3)
    odd, on_plate, umax = antisymmetric_response(mesh, CoefficientField.identity(2), rng.standard_normal(mesh.nv))
    assert umax > 0
    assert odd <= 1e-12 * umax and on_plate <= 1e-12 * umax
