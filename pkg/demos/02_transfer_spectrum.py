"""
Spectrum of the wall-to-wall transfer operator
==============================================

M_lam H moves incoming wall flux across the vessel with damping
exp(-lam tau) and re-emits it diffusely.  At lam = 0 it is stochastic and
its Perron eigenvalue is 1; on the rest of the imaginary axis the spectral
radius drops below 1, and the Perron eigenvalue moves left with slope
-int tau phi0.
"""
import numpy as np

from kinetrate import BoundaryGrid, TransferOperator, VelocityMeasure, make_domain, make_kernel
from kinetrate.transfer import BoundaryOperator

dom = make_domain("disk")
vm = VelocityMeasure(0.25, "lebesgue", 2, 6, 16)
bg = BoundaryGrid(dom, vm, 48)
kern = make_kernel(dom, vm, "maxwellian", 1.0)
op = TransferOperator(bg, kern)

print("r(M_0 H) =", op.spectral_radius(0.0))
for eta in (0.25, 0.5, 1.0, 2.0, 4.0):
    print(f"eta={eta:4.2f}  r(M_i.eta H) = {op.spectral_radius(1j * eta):.4f}")

# slope of the leading eigenvalue: formula against a finite difference
rep = op.leading_eigenpair(0.0)
fd = (op.leading_eigenpair(1e-3).nu.real - 1) / 1e-3
print("nu'(0) formula", op.nu_prime_zero(rep.phi), " finite difference", fd)

# high frequencies: the continuum boundary operator squared loses mass
bo = BoundaryOperator(bg, kern)
for eta in (4.0, 16.0, 64.0):
    print(f"eta={eta:5.1f}  |L(i eta)| = {bo.l1_norm(1j * eta):.3e}")
