"""
Chords, exit times and the boundary Jacobian
============================================

A particle leaving the wall of a convex vessel flies straight until it hits
the wall again.  Integrals over outgoing directions can therefore be
rewritten as integrals over the landing points; the Jacobian J(x, y) is the
conversion factor.
"""
import numpy as np

from kinetrate import make_domain
from kinetrate.chv import c2_bound_constant, chv_identity_residual, delta_shell_integral

disk = make_domain("disk")
ell = make_domain("ellipse", [2.0, 1.0])

# exit time from the centre and across a diameter
print("t(0, e1)        =", disk.exit_time(np.zeros(2), np.array([1.0, 0.0])))
print("t(e1, -e1)      =", disk.exit_time(np.array([1.0, 0.0]), np.array([-1.0, 0.0])))

# the hemisphere integral of |s.n| is 2 in the plane, whatever the shape
one = lambda s: np.ones(len(s))
for name, dom, x in (("disk", disk, np.array([1.0, 0.0])), ("ellipse", ell, ell.chart(0.4))):
    lhs, rhs, res = chv_identity_residual(dom, x, one)
    print(f"{name:8s} sphere side {lhs:.12f}  boundary side {rhs:.12f}  residual {res:.1e}")

# J is bounded by C^2 |x-y|^(3-d); C is half the largest curvature
print("C(disk)    =", c2_bound_constant(disk))
print("C(ellipse) =", c2_bound_constant(ell))

# near-diagonal mass of J vanishes like delta^2 on smooth walls
for delta in (0.4, 0.2, 0.1, 0.05):
    print(f"delta={delta:5.3f}  shell integral {delta_shell_integral(disk, np.array([0.0, 1.0]), delta):.3e}")
