"""
The boundary function on the imaginary axis
===========================================

R(eps + i eta) f has a limit as eps -> 0 when f has zero mean.  The limit
is approached along a ladder of eps values; the Cauchy increments halve
with eps.  For data with mass, eps R(eps) f tends to the mass instead.
"""
import numpy as np

from kinetrate import PhaseDensity
from kinetrate.cli import build
from kinetrate.config import parse_config
from kinetrate.resolvent import DivergenceError

s = build(parse_config(None))
psi = s.res.invariant_density()
g = PhaseDensity.from_function(
    s.pgrid, lambda x, v: (1 + 0.5 * np.tanh(x[..., 0] - v[..., 1])) * np.exp(-np.sum(v**2, -1) / 2))
f = g - psi * (g.mass() / psi.mass())

for eta in (0.0, 1.0):
    r = s.res.boundary_function(f, eta)
    print(f"eta={eta}: method {r.method}, increments",
          np.array2string(np.asarray(r.increments), precision=2),
          "shrink", np.array2string(np.asarray(r.shrink_factors()), precision=2))

try:
    s.res.boundary_function(psi, 0.0)
except DivergenceError as exc:
    print("Psi has mass one; eps |R(eps) Psi| =", np.round(exc.scaled_norms, 4))
