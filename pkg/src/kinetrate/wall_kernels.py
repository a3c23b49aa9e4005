"""Diffuse wall operators ``H psi(x,v) = int h(x,v,v') psi(x,v') |v'.n| m(dv')``.

All shipped families have a re-emission law independent of the incoming
velocity, ``h(x,v,v') = G(x,|v|) / gamma(x)`` with
``gamma(x) = int_{Gamma_-(x)} G |v.n| m(dv)``, which makes ``H`` rank one in
velocity at every wall point.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import DomainError, DomainGeometry
from .phase_grid import BoundaryGrid, VelocityMeasure

THETA_MIN = 0.5


def theta_profile(kind):
    """Wall temperature as a function of the chart parameter ``s``."""
    if isinstance(kind, (int, float)):
        t = float(kind)
        if t < THETA_MIN:
            raise ValueError(f"wall temperature below {THETA_MIN}")
        return lambda s: np.full(np.shape(s), t)
    if kind == "bump":
        return lambda s: 1.0 + 0.5 * np.sin(s)
    if kind == "step":
        return lambda s: np.where(np.mod(s, 2 * np.pi) < np.pi, 1.5, 0.5)
    raise ValueError(f"unknown temperature profile {kind!r}")


def maxwellian(r, theta, d=2):
    """``M_theta(v) = (2 pi theta)^(-d/2) exp(-|v|^2 / 2 theta)``."""
    return (2 * np.pi * theta) ** (-d / 2) * np.exp(-np.asarray(r) ** 2 / (2 * theta))


@dataclass
class IntegrabilityReport:
    n_h: float
    table: dict = field(default_factory=dict)


class DiffuseKernel:
    """Wall kernel of a given family.

    Parameters
    ----------
    family : {"maxwellian", "power", "radial"}
        ``"power"`` uses ``G = |v|^a``; ``"radial"`` takes ``profile(s, r)``.
    theta : float or str
        Temperature (maxwellian only): a constant, ``"bump"`` or ``"step"``.
    """

    def __init__(self, domain: DomainGeometry, vm: VelocityMeasure, family="maxwellian",
                 theta=1.0, exponent_a=2.0, profile=None):
        self.domain = domain
        self.vm = vm
        self.family = family
        self.theta_kind = theta
        self.a = float(exponent_a)
        if family == "maxwellian":
            self.theta = theta_profile(theta)
        elif family == "power":
            if self.a < 0:
                raise ValueError("power-law exponent must be >= 0")
        elif family in ("radial", "separable"):
            if profile is None:
                raise ValueError("radial family needs a profile(s, r)")
            self._profile = profile
        else:
            raise ValueError(f"unknown kernel family {family!r}")
        self._gamma_cache = {}

    @property
    def x_independent(self) -> bool:
        if self.family == "maxwellian":
            return isinstance(self.theta_kind, (int, float))
        return self.family == "power"

    def profile(self, s, r):
        """Unnormalised re-emission profile ``G(x(s), r)``."""
        d = self.domain.d
        if self.family == "maxwellian":
            return maxwellian(r, self.theta(s), d)
        if self.family == "power":
            return np.asarray(r, dtype=float) ** self.a * np.ones(np.shape(s))
        return self._profile(s, r)

    # -- normalisation -------------------------------------------------------
    def gamma(self, s, c=None) -> np.ndarray:
        """Continuum ``gamma`` on the annulus (``c=0`` gives the untruncated value)."""
        vm = self.vm
        c = vm.c if c is None else c
        hi = np.inf if c == 0 else 1 / c
        # half-space flux integral of |s.n| over directions: 2 (d=2), pi (d=3)
        ang = 2.0 if self.domain.d == 2 else np.pi
        s = np.atleast_1d(np.asarray(s, dtype=float))
        out = np.empty(len(s))
        for i, si in enumerate(s):
            key = (round(float(si), 14), c)
            if key not in self._gamma_cache:
                self._gamma_cache[key] = ang * vm.radial_integral(
                    lambda r: r * float(self.profile(si, r)), c, hi)
            out[i] = self._gamma_cache[key]
        return out

    def discrete_gamma(self, bgrid: BoundaryGrid) -> np.ndarray:
        """Per-node normalisation on the local Gamma_- quadrature."""
        G = self.profile(bgrid.s[bgrid.node], bgrid.speed)
        return bgrid.node_sum(bgrid.b * G)

    def eval_kernel(self, x, v, vprime, normalise="continuum"):
        """``h(x, v, v')`` for ``v.n < 0 < v'.n``."""
        x = np.asarray(x, dtype=float)
        n = self.domain.outward_normal(x)
        if np.any(np.sum(np.atleast_2d(v) * np.atleast_2d(n), axis=-1) >= 0):
            raise DomainError("re-emitted velocity must point into the domain")
        if np.any(np.sum(np.atleast_2d(vprime) * np.atleast_2d(n), axis=-1) <= 0):
            raise DomainError("incoming velocity must point towards the wall")
        s = self.domain.chart_param(x)
        r = np.linalg.norm(v, axis=-1)
        return self.profile(s, r) / self.gamma(s).reshape(np.shape(r))

    def check_stochastic(self, bgrid: BoundaryGrid, renormalised=True) -> np.ndarray:
        """Discrete ``int_{v.n<0} h |v.n| m(dv)`` at every node."""
        G = self.profile(bgrid.s[bgrid.node], bgrid.speed)
        gam = self.discrete_gamma(bgrid) if renormalised else self.gamma(bgrid.s)
        return bgrid.node_sum(bgrid.b * G) / gam

    def node_kernel(self, bgrid: BoundaryGrid) -> np.ndarray:
        """``h`` at every Gamma_- node, discretely renormalised."""
        G = self.profile(bgrid.s[bgrid.node], bgrid.speed)
        return G / self.discrete_gamma(bgrid)[bgrid.node]

    def h_matrix(self, bgrid: BoundaryGrid, node: int) -> np.ndarray:
        """Dense per-node matrix of ``H``: rows Gamma_-(x), columns Gamma_+(x).

        Entries are ``h(x,v,v') |v'.n| w(v')`` so columns carry flux masses.
        """
        sl = slice(node * bgrid.per_node, (node + 1) * bgrid.per_node)
        hk = self.node_kernel(bgrid)[sl]
        return np.outer(hk, bgrid.b[sl])

    def column_flux_sums(self, bgrid: BoundaryGrid) -> np.ndarray:
        """``sum_v H[v, v'] |v.n| w(v) / (|v'.n| w(v'))`` for every column."""
        out = []
        for k in range(bgrid.n_nodes):
            sl = slice(k * bgrid.per_node, (k + 1) * bgrid.per_node)
            Hk = self.h_matrix(bgrid, k)
            out.append((bgrid.b[sl] @ Hk) / bgrid.b[sl])
        return np.concatenate(out)

    def apply_H(self, bgrid: BoundaryGrid, phi) -> np.ndarray:
        """Map a Gamma_+ flux to the re-emitted Gamma_- values (node-local)."""
        F = bgrid.flux(phi)
        return self.node_kernel(bgrid) * F[bgrid.node]

    # -- Monte Carlo ---------------------------------------------------------
    def speed_sampler(self, s=None, n_table=4097):
        """Inverse-CDF table for the flux-weighted speed law on (c, 1/c)."""
        vm = self.vm
        r = np.linspace(vm.c, 1 / vm.c, n_table)
        s0 = 0.0 if s is None else s
        dens = r ** self.domain.d * vm.varpi(r) * self.profile(s0, r)
        cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(r))])
        cdf /= cdf[-1]
        return r, cdf

    def sample_reemission(self, x, u_speed, u_angle, table=None):
        """Re-emitted velocities at boundary points ``x`` from uniforms.

        The speed comes from the inverse CDF of ``r^d w(r) G(r)``; in 2D the
        angle to the inward normal is ``arcsin(2u - 1)`` (cosine law).
        """
        x = np.atleast_2d(x)
        n = self.domain.outward_normal(x)
        if table is None:
            if not self.x_independent:
                s = self.domain.chart_param(x)
                r = np.array([np.interp(u, *reversed(self.speed_sampler(si)))
                              for u, si in zip(np.atleast_1d(u_speed), s)])
            else:
                table = self.speed_sampler()
        if table is not None:
            rr, cdf = table
            r = np.interp(u_speed, cdf, rr)
        if self.domain.d != 2:
            raise NotImplementedError("sampling implemented for planar domains")
        a = np.arcsin(2 * np.asarray(u_angle) - 1)
        t = np.stack([-n[:, 1], n[:, 0]], axis=1)
        om = -np.cos(a)[:, None] * n + np.sin(a)[:, None] * t
        return np.asarray(r)[:, None] * om

    # -- integrability -------------------------------------------------------
    def integrability_index(self, kmax=8) -> IntegrabilityReport:
        """Largest ``k`` with ``sup int max(1,|v|^-(k+1)) h |v.n| m(dv) < inf``.

        Near ``v = 0`` the integrand behaves like ``r^(a + b + d - k - 1)`` for
        ``G ~ r^a`` and ``w ~ r^b``, so the integral is finite iff
        ``k < d + a + b``.  Radial profiles are probed numerically through the
        growth of the truncated integral as the cutoff tends to zero.
        """
        d = self.domain.d
        b = self.vm.b
        table = {}
        if self.family in ("maxwellian", "power"):
            a = self.a if self.family == "power" else 0.0
            for k in range(kmax + 1):
                table[k] = k < d + a + b
        else:
            for k in range(kmax + 1):
                vals = []
                for c in (1e-2, 1e-3, 1e-4):
                    vals.append(self.vm.radial_integral(
                        lambda r: r ** (-k) * float(np.max(self._profile(0.0, r))), c, 1.0))
                table[k] = vals[-1] < 1.5 * vals[-2] + 1e-12
        finite = [k for k, ok in table.items() if ok]
        n_h = np.inf if len(finite) == kmax + 1 else (max(finite) if finite else -1)
        return IntegrabilityReport(n_h, table)


def make_kernel(domain, vm, family="maxwellian", theta=1.0, exponent_a=2.0):
    fam = {"power-law": "power", "power": "power", "maxwellian": "maxwellian"}.get(family, family)
    return DiffuseKernel(domain, vm, fam, theta, exponent_a)
