"""
Relaxation to the invariant density
===================================

Start from a localized bump and follow the gas until it forgets where it
started.  The deterministic renewal marcher and a Monte Carlo particle run
describe the same dynamics.
"""
import numpy as np

from kinetrate import RenewalMarcher
from kinetrate.cli import build, f0_density, f0_parts
from kinetrate.config import parse_config
from kinetrate.evolution import (geometric_times, marcher_histogram, mc_evolve, mc_histogram,
                                 sample_mixture)

s = build(parse_config(None))
D = s.domain.diameter
psi = s.res.invariant_density()

# zero-mean bump: the distance to equilibrium is just its norm
f0 = f0_density(s, "bump")
m = RenewalMarcher(s.pgrid, s.op, f0)
print(f"t=0      distance {m.distance():.3e}")
for t in geometric_times(0.5 * D, 50 * D, 2.0):
    m.advance_to(t)
    print(f"t={t:7.2f}  distance {m.distance():.3e}  mass {m.mass():+.1e}")

# time averages converge to rho Psi at rate 1/T
f = f0 + psi
avg = RenewalMarcher(s.pgrid, s.op, f, laplace=(0.0,))
for T in (10 * D, 50 * D):
    avg.advance_to(T)
    print(f"T={T:6.1f}  Cesaro error {(avg.cesaro() - psi).norm(0):.3e}")

# particles against the marcher on a coarse phase histogram
m = RenewalMarcher(s.pgrid, s.op, f0_density(s, "halfspace"))
m.advance_to(5 * D)
ref = marcher_histogram(s.pgrid, m.flat_masses())
p = sample_mixture(s.domain, s.kernel, 200000, f0_parts(s, "halfspace"), seed=1)
h, se = mc_histogram(mc_evolve(p, s.kernel, m.time, seed=1), s.domain)
z = np.abs(h - ref) / se
print(f"MC vs marcher: {np.mean(z <= 4):.1%} of cells within 4 standard errors")
