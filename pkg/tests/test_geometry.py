import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from divform import geometry as geo
from divform.errors import NotSingularCornerError, OutOfRegionError
from divform.geometry import Chart, ModelKind, ModelSet, Polyhedron


def test_model_set_membership_is_exact():
    plate = ModelSet(ModelKind.HALF_CUBE_PLUS_PLATE, 1.0, 2)
    half = ModelSet(ModelKind.HALF_CUBE_PLUS_HALF_PLATE, 1.0, 2)
    cube = ModelSet(ModelKind.HALF_CUBE, 1.0, 2)
    pts = np.array([[0.5, 0.0], [-0.5, 0.0], [0.0, -0.5], [0.0, -1.0], [1.0, -0.5], [0.0, 0.0]])
    assert plate.contains(pts).tolist() == [True, True, True, False, False, True]
    assert half.contains(pts).tolist() == [False, True, True, False, False, False]
    assert cube.contains(pts).tolist() == [False, False, True, False, False, False]


def test_rho1_identity_on_negative_axis():
    x = np.linspace(-1.5, 0, 7)
    pts = np.column_stack([x, np.zeros_like(x)])
    assert np.allclose(geo.rho1()(pts), pts, atol=0)


def test_rho1_branch_boundary_consistent():
    # both printed branches give (-1/2, -1/2) on y = x
    out = geo.rho1()([[-1.0, -1.0]])
    assert np.allclose(out, [[-0.5, -0.5]], atol=1e-15)
    x, y = -1.0, -1.0
    assert np.allclose([x - y / 2, y / 2], [x / 2, -x / 2 + y])


def test_rho2_printed_formula():
    assert np.allclose(geo.rho2()([[0.0, 0.0]]), [[0.0, 1.0]])


def test_eval_chart_out_of_region():
    with pytest.raises(OutOfRegionError):
        geo.rho1(box=4)([[100.0, 0.0]])


def test_identity_composition():
    c = geo.rho2()
    ident = Chart.identity(2, Polyhedron.box([-50, -50], [50, 50]))
    pts = geo.sobol(200, 2, 3) * 4 - 2
    assert np.allclose(geo.compose(c, ident)(pts), c(pts), atol=1e-14)


def test_half_plate_composite_exact_unit_determinants():
    chart = geo.half_plate_chart()
    assert len(chart.pieces) == 8
    for p in chart.pieces:
        assert all(isinstance(v, sp.Rational) for v in p.matrix)
        assert abs(p.matrix.det()) == 1


def test_half_plate_composite_maps_into_plate_model():
    chart = geo.half_plate_chart()
    src = geo.half_cube_contains("half_plate")
    target = ModelSet(ModelKind.HALF_CUBE_PLUS_PLATE, 1.0, 2)
    pts = 2 * geo.sobol(2 ** 14, 2, 0) - 1
    pts[:, 1] = -np.abs(pts[:, 1])
    pts = pts[src(pts)][:10_000]
    img = chart(pts)
    assert len(pts) == 10_000
    assert np.all(target.contains(img))


def test_half_plate_composite_on_axis_segment():
    chart = geo.half_plate_chart()
    x = np.linspace(-0.999, -0.001, 100)
    img = chart(np.column_stack([x, np.zeros_like(x)]))
    assert np.all(np.abs(img) <= 1 + 1e-12) and np.all(img[:, 1] <= 1e-12)


def test_phi_unfold_matrix_and_identity_line():
    chart = geo.phi_unfold()
    mats = [np.array(p.matrix, dtype=float) for p in chart.pieces]
    target = np.array([[2, 1, 0], [-1, 0, 0], [0, 0, 1]], dtype=float)
    assert any(np.array_equal(m, target) for m in mats)
    assert np.linalg.det(target) == pytest.approx(1.0, abs=1e-15)
    t = np.linspace(-3, 3, 13)
    line = np.column_stack([t, -t, np.linspace(-1, 1, 13)])
    assert np.allclose(target @ line.T, line.T)
    assert np.allclose(chart(line), line)


@pytest.mark.parametrize("corner", sorted(geo.SING))
def test_corner_chart_image_is_convex_wedge(corner):
    chart = geo.build_crossing_beams_chart(corner)
    eps = 0.2
    pts = np.asarray(corner, float) + eps * (2 * geo.sobol(4000, 3, 1) - 1)
    pts = pts[geo.crossing_beams_contains(pts)][:1000]
    img = chart(pts)
    assert np.all(img[:, 1] > 0) and np.all(img[:, 2] < 0)
    # conversely the small convex box pulls back into the beams
    box = 0.05 * (geo.sobol(1000, 3, 2) * [2, 1, 1] - [1, 0, 1])
    box = box[(box[:, 1] > 0) & (box[:, 2] < 0)]
    assert np.all(geo.crossing_beams_contains(chart.inverse()(box)))


def test_corner_chart_rejects_regular_points():
    with pytest.raises(NotSingularCornerError):
        geo.build_crossing_beams_chart((0, 0, 0))


def test_crossing_beams_membership_examples():
    inside = geo.crossing_beams_contains
    assert inside([[0, 0, 1]])[0]
    assert not inside([[5, 0, 1]])[0]
    assert inside([[0, 0, 0]])[0]


def test_validate_identity_chart_passes():
    chart = Chart.identity(2, Polyhedron.box([-4, -4], [4, 4]))
    entry = geo.AtlasEntry(geo.BoundaryPatch((0.0, 0.0), 1.0), chart,
                           ModelSet(ModelKind.HALF_CUBE_PLUS_PLATE, 1.0, 2))
    atlas = geo.Atlas("K-", [entry], [], geo.half_cube_contains("plate"))
    assert geo.validate_atlas(atlas, 500).passed


@pytest.mark.parametrize("d", [2, 3])
def test_validate_scaling_chart_fails_with_det_deviation(d):
    chart = Chart.affine(2 * sp.eye(d), region=Polyhedron.box([-4] * d, [4] * d))
    entry = geo.AtlasEntry(geo.BoundaryPatch(tuple([0.0] * d), 1.0), chart,
                           ModelSet(ModelKind.HALF_CUBE_PLUS_PLATE, 1.0, d))
    rep = geo.validate_atlas(geo.Atlas("scaled", [entry]), 200)
    det = [r for r in rep.rows if r.check == "det"][0]
    assert not rep.passed
    assert det.max_deviation == pytest.approx(2 ** d - 1)


def test_half_plate_atlas_validates_in_3d():
    assert geo.validate_atlas(geo.half_plate_atlas(3), 300).passed


def test_atlas_roundtrip(tmp_path):
    atlas = geo.half_plate_atlas(2)
    path = tmp_path / "atlas.json"
    atlas.dump(path)
    back = geo.Atlas.load(path, atlas.contains)
    pts = 2 * geo.sobol(100, 2, 5) - 1
    pts[:, 1] = -np.abs(pts[:, 1])
    assert np.array_equal(back.entries[0].chart(pts), atlas.entries[0].chart(pts))


def test_validation_report_csv_columns():
    rep = geo.validate_atlas(geo.neumann_plate_atlas(2), 50)
    assert rep.to_csv().splitlines()[0] == "chart_id,check,max_deviation,pass"


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-0.99, 0.99), min_size=2, max_size=2))
def test_composite_inverse_roundtrip(p):
    chart = geo.half_plate_chart()
    x = np.array([p])
    assert np.allclose(chart.inverse()(chart(x)), x, atol=1e-13)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 3), st.lists(st.floats(-0.3, 0.3), min_size=3, max_size=3))
def test_corner_charts_unit_jacobian_everywhere(k, offset):
    corner = sorted(geo.SING)[k]
    chart = geo.build_crossing_beams_chart(corner)
    x = np.asarray(corner, float) + np.asarray(offset)
    idx = chart.piece_index(x[None])[0]
    assert abs(abs(chart.pieces[idx].det) - 1) == 0
