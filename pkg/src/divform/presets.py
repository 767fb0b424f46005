"""Named geometries: mesh generator, optional atlas and exact membership."""

from __future__ import annotations

from dataclasses import dataclass
from functools import partial
from typing import Callable

import numpy as np

from . import geometry as geo
from .mesh import crossing_beams_mesh, half_cube_mesh, layered_prism_mesh, unit_square_mixed_mesh


@dataclass(frozen=True)
class GeometryPreset:
    """A domain with mixed boundary partition.

    ``mesh_generator(n)`` returns the mesh at refinement level ``n``;
    ``atlas()`` builds the chart atlas or is ``None``; ``contains`` is the
    exact membership test of ``Omega u Gamma``.
    """

    name: str
    mesh_generator: Callable
    atlas: Callable | None
    contains: Callable
    dim: int
    notes: str = ""


def _unit_square(pts):
    p = np.atleast_2d(np.asarray(pts, dtype=float))
    return np.all((p > 0) & (p < 1), axis=1)


def _prism(pts):
    p = np.atleast_2d(np.asarray(pts, dtype=float))
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    return (x > 0) & (y > 0) & (x + y < 1) & (z > 0) & (z < 1)


PRESETS = {
    "CROSSING_BEAMS": GeometryPreset(
        "CROSSING_BEAMS", crossing_beams_mesh, geo.crossing_beams_atlas, geo.crossing_beams_contains, 3,
        "two orthogonal beams joined along a square plate; non-Lipschitz along the four corner points"),
    "HALF_CUBE_NEUMANN_PLATE": GeometryPreset(
        "HALF_CUBE_NEUMANN_PLATE", partial(half_cube_mesh, gamma="plate"),
        partial(geo.neumann_plate_atlas, 2), geo.half_cube_contains("plate", 2), 2,
        "lower half square with Neumann top plate"),
    "HALF_CUBE_HALF_PLATE": GeometryPreset(
        "HALF_CUBE_HALF_PLATE", partial(half_cube_mesh, gamma="half_plate"),
        partial(geo.half_plate_atlas, 2), geo.half_cube_contains("half_plate", 2), 2,
        "lower half square with Neumann on the left half of the top plate"),
    "UNIT_SQUARE_MIXED": GeometryPreset(
        "UNIT_SQUARE_MIXED", unit_square_mixed_mesh, None, _unit_square, 2,
        "unit square, Dirichlet on x = 0, Neumann elsewhere"),
    "LAYERED_PRISM": GeometryPreset(
        "LAYERED_PRISM", layered_prism_mesh, None, _prism, 3,
        "triangular prism, Dirichlet bottom, interface plane at z = 1/2"),
}


def get_preset(name: str) -> GeometryPreset:
    try:
        return PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown geometry preset {name!r}; known: {sorted(PRESETS)}") from None


def membership(preset, p) -> bool | np.ndarray:
    """Exact membership of ``p`` (one point or an array of points)."""
    if isinstance(preset, str):
        preset = get_preset(preset)
    p = np.asarray(p, dtype=float)
    res = preset.contains(p)
    return bool(res[0]) if p.ndim == 1 else res
