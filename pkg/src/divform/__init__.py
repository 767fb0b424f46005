"""Divergence-form operators on nonsmooth domains with mixed boundary conditions.

Submodules
----------
geometry        piecewise-affine volume-preserving charts, atlases, validation
coefficients    piecewise-constant coefficient fields, transformation, reflection
mesh            simplicial meshes, P1 spaces and mesh generators
assembly        stiffness / mass / boundary mass, traces, discrete norms
spectral        functional calculus and numerical checks of operator bounds
nonlinearities  catalogue of F, G, R nonlinearities
solver          quasilinear time stepping and regularity audit
presets         named geometries
cli             batch front end (``divform``)
"""

__version__ = "0.1.0"

from .assembly import DiscreteOperatorSet, assemble, discrete_norms, exact_errors  # noqa: E402
from .coefficients import BoundaryData, CoefficientField, pushforward, reflect  # noqa: E402
from .geometry import Chart, ModelKind, ModelSet, Polyhedron, compose, validate_atlas  # noqa: E402
from .mesh import FESpace, MeshBundle  # noqa: E402
from .presets import PRESETS, GeometryPreset, membership  # noqa: E402
from .solver import ProblemSpec, TimeSeries, build_B, build_S, check_umform, solve, step  # noqa: E402
from .spectral import CheckReport, SpectralBundle  # noqa: E402

__all__ = [
    "BoundaryData", "Chart", "CheckReport", "CoefficientField", "DiscreteOperatorSet", "FESpace",
    "GeometryPreset", "MeshBundle", "ModelKind", "ModelSet", "PRESETS", "Polyhedron", "ProblemSpec",
    "SpectralBundle", "TimeSeries", "assemble", "build_B", "build_S", "check_umform", "compose",
    "discrete_norms", "exact_errors", "membership", "pushforward", "reflect", "solve", "step",
    "validate_atlas",
]
