"""Eigenvalue and eigenfunction asymptotics for a potential with a jump, and
Riesz-basis indicators for growing truncations."""

import numpy as np

from diracspec.boundary import BoundaryForm
from diracspec.diagnostics import asymptotics_report, basis_report, eigenfunction_asymptotics
from diracspec.potential import Potential

PI = np.pi
U = BoundaryForm.preset("dirichlet")
Q = Potential.piecewise([0, 1.1, PI], [{"q1": 0.4, "q2": "0.3j", "q4": -0.4},
                                      {"q1": -0.2, "q3": "0.5", "q4": 0.2}])

rep = asymptotics_report(Q, U, range(5, 41, 5))
print(f"fitted M = {rep.M:.4f}")
print(" n   deviation   r_n         bound")
for n, d, r, b in zip(rep.n, rep.deviation, rep.r, rep.bound):
    print(f"{n:3d}  {d:.3e}  {r:.3e}  {b:.3e}")

ef = eigenfunction_asymptotics(Q, U, [2, 4, 8, 16, 32])
print("\n n   b_n        b_n (adjoint)")
for n, b, ba in zip(ef.n, ef.b, ef.b_adjoint):
    print(f"{n:3d}  {b:.3e}  {ba:.3e}")

print("\n N   Gram cond   biorthogonality")
for N in (4, 8, 16):
    br = basis_report(Q, U, N)
    print(f"{N:3d}  {br.gram_cond:.4f}      {br.biorthogonality_error:.1e}")
