"""Volume-preserving charts for the half-plate square and the crossing beams.

Builds the piecewise affine composite that maps the square with a Neumann
half plate onto the model set with a full plate, checks that every piece
has unit determinant in exact arithmetic, and validates the atlas of the
crossing beams. Run with ``python demos/charts_and_atlas.py``.
"""

import numpy as np

from divform import geometry as geo

chart = geo.half_plate_chart()
print(f"composite: {len(chart.pieces)} affine pieces")
for k, piece in enumerate(chart.pieces):
    print(f"  piece {k}: det = {piece.matrix.det()}")

# a few points of the lower half square and their images
pts = np.array([[-0.5, -0.1], [0.5, -0.1], [-0.2, 0.0], [0.3, -0.7]])
for p, q in zip(pts, chart(pts)):
    print(f"  {p} -> {np.round(q, 6)}")

dev = geo.check_chart(chart, samples=1000)
print("deviations:", {k: f"{v:.1e}" for k, v in dev.items()})

# corner charts of the crossing beams, then the full atlas
for corner in sorted(geo.SING):
    c = geo.build_crossing_beams_chart(corner, flatten=True)
    print(f"corner {corner}: {len(c.pieces)} pieces, det deviation {c.det_deviation():.1e}")

report = geo.validate_atlas(geo.crossing_beams_atlas(), 500)
print(f"crossing beams atlas: {len(report.rows)} rows, all pass = {report.passed}")
