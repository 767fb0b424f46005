"""Command line front end: ``divform <command> --config run.toml [--out DIR] [--seed N]``.

Every run writes ``manifest.txt`` (config echo, versions, seed, wall time)
and one or more ``report_*.csv`` files into the output directory. CSV
bodies depend only on the configuration and the seed. Exit status is 0 if
every row passes, 1 if any row fails, 2 on configuration or runtime errors.
"""

from __future__ import annotations

import argparse
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy
import scipy.sparse.linalg as spla

try:
    import tomllib as tomli
except ModuleNotFoundError:  # Python 3.10
    import tomli

from . import __version__
from . import solver as sv
from .assembly import assemble, cell_load_full, exact_errors
from .coefficients import BoundaryData, CoefficientField
from .errors import BlowUpError, ConfigError, DivformError
from .geometry import Polyhedron, validate_atlas
from .mesh import FESpace, MeshBundle, unit_square_mixed_mesh
from .nonlinearities import CATALOG, derivative_of
from .presets import get_preset
from .spectral import (
    CheckReport,
    SpectralBundle,
    heat_kernel_check,
    resolvent_decay_check,
    riesz_bound_check,
    sqrt_agreement,
)

SCHEMA_VERSION = 1
COMMANDS = ("check-geometry", "verify-spectral", "solve-elliptic", "solve-parabolic", "study-convergence")

# section -> allowed keys; top-level scalars live under ""
SCHEMA = {
    "": {"schema_version", "command", "seed"},
    "geometry": {"preset", "mesh", "level", "levels"},
    "coefficient": {"path", "scalar", "split_axis", "split_at", "values"},
    "boundary": {"dirichlet", "kappa", "g"},
    "atlas": {"samples", "tol"},
    "spectral": {"checks", "q", "lambdas", "n_quad", "n_vectors", "starts", "times", "ratio_bound"},
    "load": {"value"},
    "nonlinearity": {"F", "G", "G_value"},
    "parabolic": {"T0", "T", "dt", "dt_max", "dt_min", "refreshes", "tol", "source", "u0"},
    "study": {"kind", "levels", "dts", "ref_dt", "T", "min_rate"},
    "output": {"vtk"},
}


# ---------------------------------------------------------------------------
# configuration


def load_config(path) -> dict:
    """Parse and schema-check a TOML run configuration."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"configuration file {path} does not exist", field="--config")
    try:
        cfg = tomli.loads(path.read_text())
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return check_config(cfg)


def check_config(cfg: dict) -> dict:
    ver = cfg.get("schema_version")
    if ver != SCHEMA_VERSION:
        raise ConfigError(f"schema_version must be {SCHEMA_VERSION}, got {ver!r}", field="schema_version")
    for key, val in cfg.items():
        if isinstance(val, dict):
            if key not in SCHEMA or key == "":
                raise ConfigError(f"unknown section [{key}]", field=key)
            extra = set(val) - SCHEMA[key]
            if extra:
                raise ConfigError(f"unknown key(s) {sorted(extra)} in [{key}]", field=f"{key}.{sorted(extra)[0]}")
        elif key not in SCHEMA[""]:
            raise ConfigError(f"unknown top-level key {key!r}", field=key)
    if "command" in cfg and cfg["command"] not in COMMANDS:
        raise ConfigError(f"unknown command {cfg['command']!r}", field="command")
    for sec, key in (("atlas", "tol"), ("parabolic", "tol"), ("parabolic", "dt"), ("parabolic", "dt_min")):
        v = cfg.get(sec, {}).get(key)
        if v is not None and not (isinstance(v, (int, float)) and v > 0):
            raise ConfigError(f"{sec}.{key} must be a positive number", field=f"{sec}.{key}")
    return cfg


def _section(cfg, name) -> dict:
    return cfg.get(name, {})


def _mesh(cfg, level=None) -> MeshBundle:
    g = _section(cfg, "geometry")
    if "mesh" in g:
        p = Path(g["mesh"])
        if not p.exists():
            raise ConfigError(f"mesh file {p} does not exist", field="geometry.mesh")
        return MeshBundle.load(p)
    preset = get_preset(g.get("preset", "UNIT_SQUARE_MIXED"))
    n = g.get("level", 4) if level is None else level
    return preset.mesh_generator(n)


def _coefficient(cfg, dim) -> CoefficientField:
    c = _section(cfg, "coefficient")
    if "path" in c:
        p = Path(c["path"])
        if not p.exists():
            raise ConfigError(f"coefficient file {p} does not exist", field="coefficient.path")
        return CoefficientField.loads(p.read_text())
    if "values" in c:
        axis, cut = int(c.get("split_axis", dim - 1)), float(c.get("split_at", 0.0))
        lo, hi = c["values"]
        n = np.zeros((1, dim))
        n[0, axis] = 1.0
        return CoefficientField([Polyhedron(n, [cut]), Polyhedron(-n, [-cut])],
                                [float(lo) * np.eye(dim), float(hi) * np.eye(dim)])
    return CoefficientField.constant(float(c.get("scalar", 1.0)) * np.eye(dim))


def _boundary(cfg, mesh: MeshBundle) -> BoundaryData:
    b = _section(cfg, "boundary")
    dirichlet = frozenset(int(t) for t in b.get("dirichlet", [0]))
    try:
        kappa = {int(k): float(v) for k, v in b.get("kappa", {}).items()}
        g = {int(k): float(v) for k, v in b.get("g", {}).items()}
    except ValueError as exc:
        raise ConfigError(f"boundary tags must be integers: {exc}", field="boundary") from exc
    return BoundaryData(kappa, g, dirichlet)


def _problem(cfg, level=None):
    mesh = _mesh(cfg, level)
    mu = _coefficient(cfg, mesh.dim)
    bd = _boundary(cfg, mesh)
    space = FESpace(mesh, bd.dirichlet_part)
    return mesh, mu, bd, space, assemble(mesh, space, mu, bd)


def _handle(name, value=None):
    if name not in CATALOG:
        raise ConfigError(f"unknown nonlinearity {name!r}; known: {sorted(CATALOG)}", field="nonlinearity")
    return CATALOG[name](value) if name == "constant" else CATALOG[name]()


def _fmt(x) -> str:
    return f"{x:.17g}" if isinstance(x, (float, np.floating)) else str(x)


def _csv(header, rows) -> str:
    return ",".join(header) + "\n" + "".join(",".join(_fmt(v) for v in r) + "\n" for r in rows)


# ---------------------------------------------------------------------------
# commands; each returns (passed, {report name: csv body}, {vtk name: text})


def cmd_check_geometry(cfg, seed):
    preset = get_preset(_section(cfg, "geometry").get("preset", "CROSSING_BEAMS"))
    if preset.atlas is None:
        raise ConfigError(f"preset {preset.name} has no atlas", field="geometry.preset")
    a = _section(cfg, "atlas")
    rep = validate_atlas(preset.atlas(), int(a.get("samples", 1000)), float(a.get("tol", 1e-12)), seed=seed)
    return rep.passed, {"atlas": rep.to_csv()}, {}


def cmd_verify_spectral(cfg, seed):
    s = _section(cfg, "spectral")
    checks = s.get("checks", ["sqrt", "resolvent"])
    levels = _section(cfg, "geometry").get("levels", [_section(cfg, "geometry").get("level", 4)])
    starts = int(s.get("starts", 20))
    rep = CheckReport()
    ops_levels = [_problem(cfg, n)[4] for n in levels]
    for name in checks:
        if name == "sqrt":
            for k, ops in enumerate(ops_levels):
                gap = sqrt_agreement(SpectralBundle(ops), int(s.get("n_vectors", 20)),
                                     int(s.get("n_quad", 64)), seed)
                rep.add("sqrt_agreement", f"level={levels[k]}", gap, 1e-6, gap <= 1e-6)
        elif name == "resolvent":
            for k, ops in enumerate(ops_levels):
                for q in s.get("q", [2.0]):
                    rep.extend(resolvent_decay_check(ops, s.get("lambdas", [0, 1, 10, 100, 1000]), float(q),
                                                     starts, seed, label=f"@{levels[k]}"))
        elif name == "riesz":
            for q in s.get("q", [2.0]):
                rep.extend(riesz_bound_check(ops_levels, float(q), starts, seed,
                                             float(s.get("ratio_bound", 1.1))))
        elif name == "heat_kernel":
            for k, ops in enumerate(ops_levels):
                rep.extend(heat_kernel_check(ops, s.get("times", [0.01, 0.05, 0.2]), seed=seed))
        else:
            raise ConfigError(f"unknown spectral check {name!r}", field="spectral.checks")
    return rep.passed, {"spectral": rep.to_csv()}, {}


def elliptic_solve(ops, load_full) -> np.ndarray:
    """Solve ``(A0 + Q) u = f + Tr* g`` on the free dofs."""
    K = (ops.A0 + ops.Q).tocsc()
    return spla.spsolve(K, (load_full + ops.g_full)[ops.space.free])


def cmd_solve_elliptic(cfg, seed):
    mesh, mu, bd, space, ops = _problem(cfg)
    f = float(_section(cfg, "load").get("value", 0.0))
    u = elliptic_solve(ops, cell_load_full(mesh, np.full(mesh.nc, f)))
    full = space.expand(u)
    residual = float(np.abs((ops.A0 + ops.Q) @ u - (cell_load_full(mesh, np.full(mesh.nc, f)) + ops.g_full)[space.free]).max(initial=0.0))
    rows = [(i, *mesh.vertices[i], full[i]) for i in range(mesh.nv)]
    cols = ["vertex"] + [f"x{k}" for k in range(mesh.dim)] + ["u"]
    summary = CheckReport()
    summary.add("elliptic_residual", f"dofs={space.dimension}", residual, 1e-8, residual <= 1e-8)
    vtk = {"solution": mesh.to_vtk({"u": full})} if _section(cfg, "output").get("vtk") else {}
    return summary.passed, {"solution": _csv(cols, rows), "summary": summary.to_csv()}, vtk


def cmd_solve_parabolic(cfg, seed):
    mesh, mu, bd, space, ops = _problem(cfg)
    nl = _section(cfg, "nonlinearity")
    p = _section(cfg, "parabolic")
    F = _handle(nl.get("F", "identity"))
    gname = nl.get("G", "constant")
    G = derivative_of(F) if gname == "derivative_of_F" else _handle(gname, nl.get("G_value", 1.0))
    src = float(p.get("source", 0.0))
    spec = sv.ProblemSpec(mesh, mu, F=F, G=G, R=lambda t, u: np.full(mesh.nc, src), bd=bd,
                          u0=np.full(space.dimension, float(p.get("u0", 0.0))),
                          interval=(float(p.get("T0", 0.0)), float(p.get("T", 1.0))), space=space, ops=ops)
    spec.validate()
    controls = sv.Controls(dt_max=float(p.get("dt_max", 0.1)), dt_min=float(p.get("dt_min", 1e-8)),
                           refreshes=int(p.get("refreshes", 1)), tol=float(p.get("tol", 1e-3)))
    rep = CheckReport()
    try:
        series = sv.solve(spec, float(p.get("dt", 0.05)), controls)
    except BlowUpError as exc:
        rep.add("reached_T", f"t={exc.details.get('t', np.nan)}", exc.details.get("t", np.nan),
                spec.interval[1], False)
        return False, {"summary": rep.to_csv()}, {}
    rep.add("reached_T", f"steps={len(series.diagnostics)}", series.times[-1], spec.interval[1], True)
    rep.add("rejected_steps", "count", series.rejected, np.inf, True)
    vtk = {"final": mesh.to_vtk({"u": space.expand(series.states[-1])})} if _section(cfg, "output").get("vtk") else {}
    return True, {"timeseries": series.to_csv(), "diagnostics": series.diagnostics_csv(),
                  "summary": rep.to_csv()}, vtk


def _poisson_truths():
    pi = np.pi

    def smooth():
        u = lambda p: np.sin(pi * p[:, 0]) * np.sin(pi * p[:, 1])  # noqa: E731
        g = lambda p: pi * np.stack([np.cos(pi * p[:, 0]) * np.sin(pi * p[:, 1]),  # noqa: E731
                                     np.sin(pi * p[:, 0]) * np.cos(pi * p[:, 1])], axis=1)
        mesh = lambda n: unit_square_mixed_mesh(n, dirichlet="all")  # noqa: E731
        return mesh, CoefficientField.identity(2), BoundaryData(dirichlet_part={0, 1, 2}), u, g, \
            lambda m: 2 * pi ** 2 * u(m.centroids)

    def linear():
        # u = x: Dirichlet at x = 0, unit flux at x = 1, insulated top and bottom
        u = lambda p: p[:, 0]  # noqa: E731
        g = lambda p: np.tile([1.0, 0.0], (len(p), 1))  # noqa: E731
        return unit_square_mixed_mesh, CoefficientField.identity(2), BoundaryData(g={1: 1.0}), u, g, \
            lambda m: np.zeros(m.nc)

    def interface(k=4.0):
        # -(mu u')' = 1, u(0) = 0, mu u'(1) = 0, mu = 1 left of x = 1/2 and k right of it
        half = 0.5 - 0.125

        def u(p):
            x = p[:, 0]
            return np.where(x <= 0.5, x - x * x / 2, half + (x - x * x / 2 - half) / k)

        def g(p):
            x = p[:, 0]
            return np.stack([np.where(x <= 0.5, 1 - x, (1 - x) / k), np.zeros_like(x)], axis=1)

        n = np.array([[1.0, 0.0]])
        mu = CoefficientField([Polyhedron(n, [0.5]), Polyhedron(-n, [-0.5])], [np.eye(2), k * np.eye(2)])
        return unit_square_mixed_mesh, mu, BoundaryData(), u, g, lambda m: np.ones(m.nc)

    return {"poisson_smooth": smooth, "poisson_linear": linear, "interface": interface}


def cmd_study_convergence(cfg, seed):
    st = _section(cfg, "study")
    kind = st.get("kind", "parabolic_manufactured")
    levels = st.get("levels", [4, 8, 16])
    min_rate = float(st.get("min_rate", 0.9))
    rep = CheckReport()
    rows = []
    if kind == "parabolic_manufactured":
        truth = sv.exp_sine_manufactured()
        F = CATALOG["exponential"]()
        T = float(st.get("T", 0.5))
        res = sv.space_convergence(lambda n: unit_square_mixed_mesh(n, dirichlet="all"), levels, truth, F, (0.0, T))
        rows = [(r["level"], r["h"], r["L2"], r["H1"], r["Lq"]) for r in res["rows"]]
        rates = res["rates"]
        rep.add("space_rate_H1", "fitted", rates["H1"], min_rate, rates["H1"] >= min_rate)
        spec = sv.manufactured_problem(unit_square_mixed_mesh(levels[-1], dirichlet="all"), truth, F, (0.0, T))
        dts = st.get("dts", [T / 4, T / 8, T / 16, T / 32])
        tres = sv.time_convergence(spec, dts, float(st.get("ref_dt", dts[-1] / 16)))
        rep.add("time_rate_L2", "fitted", tres["rate"], min_rate, tres["rate"] >= min_rate)
        time_rows = [(r["dt"], r["L2_time"]) for r in tres["rows"]] + [("rate", tres["rate"])]
        extra = {"time_convergence": _csv(["dt", "L2_time"], time_rows)}
    elif kind in _poisson_truths():
        mesh_of, mu, bd, u, g, f = _poisson_truths()[kind]()
        for n in levels:
            mesh = mesh_of(n)
            space = FESpace(mesh, bd.dirichlet_part)
            ops = assemble(mesh, space, mu, bd)
            uh = space.expand(elliptic_solve(ops, cell_load_full(mesh, f(mesh))))
            e = exact_errors(mesh, uh, u, g)
            rows.append((n, 1.0 / n, e["L2"], e["H1"], e["Lq"]))
        errs = np.array([r[2:] for r in rows])
        if np.all(errs < 1e-10):
            rates = {"L2": "EXACT", "H1": "EXACT", "Lq": "EXACT"}
            rep.add("exact_truth", "max_error", errs.max(), 1e-10, True)
        else:
            hs = [r[1] for r in rows]
            rates = {k: sv.fit_rate(hs, errs[:, j]) for j, k in enumerate(("L2", "H1", "Lq"))}
            key = "L2" if kind == "interface" else "H1"
            rep.add(f"rate_{key}", "fitted", rates[key], min_rate, rates[key] >= min_rate)
        extra = {}
    else:
        raise ConfigError(f"unknown study kind {kind!r}", field="study.kind")
    rows.append(("rate", "", rates["L2"], rates["H1"], rates["Lq"]))
    return rep.passed, {"convergence": _csv(["level", "h", "L2", "H1", "Lq"], rows),
                        "summary": rep.to_csv(), **extra}, {}


HANDLERS = {
    "check-geometry": cmd_check_geometry,
    "verify-spectral": cmd_verify_spectral,
    "solve-elliptic": cmd_solve_elliptic,
    "solve-parabolic": cmd_solve_parabolic,
    "study-convergence": cmd_study_convergence,
}


# ---------------------------------------------------------------------------
# driver


def _manifest(command, cfg_text, seed, status, wall, reports) -> str:
    lines = [
        f"command: {command}",
        f"seed: {seed}",
        f"status: {status}",
        f"wall_time_s: {wall:.3f}",
        f"timestamp: {time.strftime('%Y-%m-%dT%H:%M:%S')}",
        f"divform: {__version__}",
        f"python: {platform.python_version()}",
        f"numpy: {np.__version__}",
        f"scipy: {scipy.__version__}",
        "reports: " + ", ".join(reports),
        "--- config ---",
        cfg_text.rstrip(),
    ]
    return "\n".join(lines) + "\n"


def run(command: str, config_path, out_dir=None, seed=None) -> int:
    """Execute one command; returns the exit status."""
    out = Path(out_dir or "divform_out")
    t0 = time.perf_counter()
    cfg_text = ""
    try:
        cfg_text = Path(config_path).read_text() if Path(config_path).exists() else ""
        cfg = load_config(config_path)
        if cfg.get("command", command) != command:
            raise ConfigError(f"config is for {cfg['command']!r}, not {command!r}", field="command")
        seed = int(cfg.get("seed", 0)) if seed is None else int(seed)
        passed, reports, fields = HANDLERS[command](cfg, seed)
        status = 0 if passed else 1
    except (DivformError, KeyError, ValueError, OSError) as exc:
        code = getattr(exc, "code", type(exc).__name__)
        details = getattr(exc, "details", {})
        print(f"error [{code}]: {exc} {details if details else ''}".rstrip(), file=sys.stderr)
        reports, fields, status = {}, {}, 2
        seed = 0 if seed is None else seed
    out.mkdir(parents=True, exist_ok=True)
    for name, body in reports.items():
        (out / f"report_{name}.csv").write_text(f"# seed={seed}\n" + body)
    for name, body in fields.items():
        (out / f"fields_{name}.vtk").write_text(body)
    (out / "manifest.txt").write_text(
        _manifest(command, cfg_text, seed, status, time.perf_counter() - t0, sorted(reports)))
    return status


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="divform", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="TOML run configuration")
    parser.add_argument("--out", default=None, help="output directory (default ./divform_out)")
    parser.add_argument("--seed", type=int, default=None, help="overrides the seed in the config")
    args = parser.parse_args(argv)
    return run(args.command, args.config, args.out, args.seed)


if __name__ == "__main__":
    sys.exit(main())
