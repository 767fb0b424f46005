"""Catalog nonlinearities: Fermi-Dirac, nonlocal coefficient, thermistor source.

Run with ``python demos/nonlinearities.py``.
"""

import numpy as np

from divform import nonlinearities as nl
from divform.assembly import assemble
from divform.coefficients import BoundaryData, CoefficientField
from divform.mesh import FESpace, unit_square_mixed_mesh

print("   t      F_1/2(t)        oracle          e^t")
for t in (-15.0, -5.0, 0.0, 2.0, 10.0):
    print(f"{t:6.1f}  {nl.fermi_dirac_half(t):.10e}  {nl.fermi_dirac_half_oracle(t, 30):.10e}  {np.exp(t):.4e}")

# nonlocal coefficient eta(int u phi) for the bacteria model
mesh = unit_square_mixed_mesh(8, dirichlet="none")
ops = assemble(mesh, FESpace(mesh, ()), CoefficientField.identity(2), BoundaryData(dirichlet_part=()))
eta = lambda r: 1 + r / (1 + abs(r))  # noqa: E731
u = np.exp(-10 * ((mesh.vertices - 0.5) ** 2).sum(axis=1))
print(f"nonlocal G = {nl.nonlocal_G(u, eta, np.ones(mesh.nv), ops.M_full):.6f}")

# Joule heating source |grad phi|^2 iota(v) with phi = 0 on x = 0 and 1 on x = 1
mixed = unit_square_mixed_mesh(8)
aux = nl.AuxBoundary({0: 0.0, 1: 1.0})
R = nl.thermistor_R(np.zeros(mixed.nv), lambda v: 1 + v ** 2, aux, mixed)
print(f"thermistor source: min {R.min():.4f}, max {R.max():.4f} (uniform field gives 1)")
