"""Free spectra for the standard boundary conditions, then the same conditions
with a complex potential switched on and the eigenvalue deviations printed."""

from diracspec.boundary import BoundaryForm, classify, unperturbed_spectrum
from diracspec.potential import Potential
from diracspec.spectrum import localize

for name in ("dirichlet", "dirichlet-neumann", "periodic", "antiperiodic"):
    U = BoundaryForm.preset(name)
    sp = unperturbed_spectrum(U)
    lams = [sp.eigenvalue(n) for n in range(-2, 3)]
    print(f"{name:18s} {classify(U).regularity.value:18s} "
          + " ".join(f"{lam.real:5.1f}" for lam in lams))

Q = Potential.from_expressions(q1="0.5*cos(x)", q2="0.3*sin(2*x)+0.2j", q3="0.1*x",
                               q4="-0.5*cos(x)")
print("\n  n   lambda_n                     |lambda_n - n|")
for p in localize(Q, BoundaryForm.preset("dirichlet"), [1, 2, 4, 8, 16, 32]):
    print(f"{p.n:3d}   {p.lam.real:12.8f} {p.lam.imag:+.8f}i   {p.deviation:.3e}")
