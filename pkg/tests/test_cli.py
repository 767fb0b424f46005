from pathlib import Path

import numpy as np
import pytest

from divform.cli import load_config, main, run
from divform.errors import ConfigError

CONFIGS = Path(__file__).resolve().parents[1] / "demos" / "configs"


def _write(tmp_path, text, name="cfg.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def _body(path):
    return path.read_text().split("\n", 1)[1]


def test_check_geometry_crossing_beams(tmp_path):
    assert run("check-geometry", CONFIGS / "check_geometry.toml", tmp_path) == 0
    report = (tmp_path / "report_atlas.csv").read_text()
    assert report.startswith("# seed=0\n")
    assert "FAIL" not in report


def test_elliptic_zero_data_gives_zero(tmp_path):
    assert main(["solve-elliptic", "--config", str(CONFIGS / "solve_elliptic.toml"), "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "report_solution.csv").read_text().splitlines()[2:]
    vals = np.array([float(line.split(",")[-1]) for line in lines])
    assert vals.size > 0 and not vals.any()
    assert (tmp_path / "fields_solution.vtk").exists()


def test_study_linear_truth_marked_exact(tmp_path):
    cfg = _write(tmp_path, 'schema_version = 1\ncommand = "study-convergence"\n'
                           '[study]\nkind = "poisson_linear"\nlevels = [2, 4, 8]\n')
    assert run("study-convergence", cfg, tmp_path / "out") == 0
    assert "EXACT" in (tmp_path / "out" / "report_convergence.csv").read_text()


def test_study_poisson_smooth_rate(tmp_path):
    cfg = _write(tmp_path, 'schema_version = 1\ncommand = "study-convergence"\n'
                           '[study]\nkind = "poisson_smooth"\nlevels = [4, 8, 16]\n')
    assert run("study-convergence", cfg, tmp_path / "out") == 0
    rows = [r.split(",") for r in (tmp_path / "out" / "report_convergence.csv").read_text().splitlines()[2:]]
    h1 = [float(r[3]) for r in rows if r[0] != "rate"]
    assert h1[0] > h1[1] > h1[2]


@pytest.mark.parametrize("text,field", [
    ('schema_version = 1\n[geometry]\nbogus = 1\n', "geometry.bogus"),
    ('schema_version = 1\n[nosuch]\n', "nosuch"),
    ('schema_version = 2\n', "schema_version"),
    ('schema_version = 1\n[geometry\n', None),
])
def test_config_errors(tmp_path, text, field, capsys):
    cfg = _write(tmp_path, text)
    with pytest.raises(ConfigError):
        load_config(cfg)
    assert run("check-geometry", cfg, tmp_path / "out") == 2
    err = capsys.readouterr().err
    assert "CONFIG_ERROR" in err
    if field:
        assert field.split(".")[-1] in err
    assert (tmp_path / "out" / "manifest.txt").exists()


def test_missing_config_file(tmp_path):
    assert run("check-geometry", tmp_path / "absent.toml", tmp_path / "out") == 2


def test_preset_without_atlas_is_an_error(tmp_path):
    cfg = _write(tmp_path, 'schema_version = 1\n[geometry]\npreset = "UNIT_SQUARE_MIXED"\n')
    assert run("check-geometry", cfg, tmp_path / "out") == 2


def test_seed_recorded_and_overridable(tmp_path):
    assert run("check-geometry", CONFIGS / "check_geometry.toml", tmp_path, seed=7) == 0
    assert (tmp_path / "report_atlas.csv").read_text().startswith("# seed=7\n")
    assert "seed: 7" in (tmp_path / "manifest.txt").read_text()


def test_determinism_byte_identical_bodies(tmp_path):
    cfg = _write(tmp_path, 'schema_version = 1\ncommand = "verify-spectral"\nseed = 3\n'
                           '[geometry]\npreset = "UNIT_SQUARE_MIXED"\nlevels = [4, 6]\n'
                           '[spectral]\nchecks = ["sqrt"]\nn_vectors = 5\n')
    for d in ("a", "b"):
        assert run("verify-spectral", cfg, tmp_path / d) in (0, 1)
    names = sorted(p.name for p in (tmp_path / "a").glob("report_*.csv"))
    assert names
    for name in names:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
