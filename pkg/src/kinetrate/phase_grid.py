"""Velocity measure, boundary flux grids and the chord-aligned phase grid.

Phase space is parametrised by characteristics: a point of Omega x V is
``(x_i - s v, v)`` with ``(x_i, v)`` a node of Gamma_+ and ``0 <= s <= tau_-``.
Then ``dx m(dv) = dmu_+ ds`` so free transport is an exact shift in ``s`` and
interior integrals are sums over chords.  Densities are stored as averages
over bins of length ``ds`` along every chord (the last bin may be partial).
"""
from __future__ import annotations

from functools import cached_property

import numpy as np
from scipy import integrate

from .geometry import DomainGeometry


class StateError(RuntimeError):
    """Raised when an operation needs data that has not been computed."""


class VelocityMeasure:
    """Radial measure ``m(dv) = w(|v|) dv`` on the annulus ``c < |v| < 1/c``.

    Parameters
    ----------
    c : float
        Truncation parameter in (0, 1).
    weight : str
        ``"lebesgue"`` or ``"power:<b>"`` for ``w(r) = r**b``.
    d : int
        Dimension.
    n_speeds, n_angles : int
        Gauss-Legendre speeds and total number of directions; each half
        space receives ``n_angles // 2`` directions.
    speed_rule : {"linear", "log"}
        Gauss-Legendre in ``r`` or in ``log r`` (resolves slow speeds).
    """

    def __init__(self, c=0.25, weight="lebesgue", d=2, n_speeds=6, n_angles=16,
                 speed_rule="linear"):
        if not 0 < c < 1:
            raise ValueError("truncation c must lie in (0, 1)")
        self.c = float(c)
        self.weight = weight
        self.d = d
        self.n_speeds = n_speeds
        self.n_angles = n_angles
        if weight == "lebesgue":
            self.b = 0.0
        elif isinstance(weight, str) and weight.startswith("power:"):
            self.b = float(weight.split(":", 1)[1])
        else:
            raise ValueError(f"unknown radial weight {weight!r}")
        lo, hi = self.c, 1.0 / self.c
        x, w = np.polynomial.legendre.leggauss(n_speeds)
        self.speed_rule = speed_rule
        if speed_rule == "linear":
            self.speeds = 0.5 * (hi - lo) * x + 0.5 * (hi + lo)
            dr = 0.5 * (hi - lo) * w
        elif speed_rule == "log":
            L = np.log(hi)
            self.speeds = np.exp(L * x)
            dr = L * w * self.speeds
        else:
            raise ValueError(f"unknown speed rule {speed_rule!r}")
        # radial weights absorb the polar Jacobian r^(d-1) and w(r)
        self.speed_weights = dr * self.speeds ** (d - 1) * self.varpi(self.speeds)
        xa, wa = np.polynomial.legendre.leggauss(n_angles // 2)
        self.half_angles = 0.5 * np.pi * xa
        self.half_angle_weights = 0.5 * np.pi * wa

    def varpi(self, r):
        return np.asarray(r, dtype=float) ** self.b

    @property
    def sphere_area(self) -> float:
        return 2 * np.pi if self.d == 2 else 4 * np.pi

    def radial_integral(self, g, lo=None, hi=None) -> float:
        """``int_lo^hi g(r) r^(d-1) w(r) dr`` by adaptive quadrature."""
        lo = self.c if lo is None else lo
        hi = 1.0 / self.c if hi is None else hi
        val, _ = integrate.quad(lambda r: g(r) * r ** (self.d - 1) * r**self.b, lo, hi,
                                limit=200, epsabs=1e-14, epsrel=1e-13)
        return val

    def total_mass(self) -> float:
        return self.sphere_area * self.radial_integral(lambda r: 1.0)

    def grid_mass(self) -> float:
        """Total mass of the quadrature (directions integrate to the sphere area)."""
        return float(np.sum(self.speed_weights)) * self.sphere_area


class BoundaryGrid:
    """Quadrature of Gamma_+ / Gamma_- on boundary nodes with local frames.

    At node ``x_i`` with normal ``n`` and tangent ``t`` the outgoing
    velocities are ``r (cos a n + sin a t)`` and the incoming ones
    ``r (-cos a n + sin a t)`` with Gauss-Legendre ``a`` in (-pi/2, pi/2).
    Nodes never fall on the grazing set.  Chords are ordered node-major.
    """

    def __init__(self, domain: DomainGeometry, vm: VelocityMeasure, n_nodes=48,
                 footpoint_rule="overlap"):
        if domain.d != 2 or vm.d != 2:
            raise NotImplementedError("transport grids are implemented for planar domains")
        self.domain = domain
        self.vm = vm
        self.n_nodes = n_nodes
        self.x, self.s, self.w = domain.boundary_quadrature(n_nodes)
        self.normal = domain.outward_normal(self.x)
        self.tangent = np.stack([-self.normal[:, 1], self.normal[:, 0]], axis=1)
        ns, na = vm.n_speeds, len(vm.half_angles)
        self.per_node = ns * na
        I, P, Q = np.meshgrid(np.arange(n_nodes), np.arange(ns), np.arange(na), indexing="ij")
        self.node = I.ravel()
        self.speed_index = P.ravel()
        self.angle_index = Q.ravel()
        r = vm.speeds[self.speed_index]
        a = vm.half_angles[self.angle_index]
        n, t = self.normal[self.node], self.tangent[self.node]
        self.speed = r
        self.v = r[:, None] * (np.cos(a)[:, None] * n + np.sin(a)[:, None] * t)
        self.v_in = r[:, None] * (-np.cos(a)[:, None] * n + np.sin(a)[:, None] * t)
        # flux weight |v.n| w_r w_a and full flux measure mu = pi-weight * b
        self.b = r * np.cos(a) * vm.speed_weights[self.speed_index] * vm.half_angle_weights[self.angle_index]
        self.mu = self.w[self.node] * self.b
        x = self.x[self.node]
        self.tau = domain.exit_time(x, self.v, "backward")
        self.foot = domain.snap(x - self.tau[:, None] * self.v)
        self.foot_s = domain.chart_param(self.foot)
        self.tau_plus_in = domain.exit_time(x, self.v_in, "forward")
        self.footpoint_rule = footpoint_rule
        # periodic linear interpolation in the chart parameter
        u = self.foot_s / (2 * np.pi) * n_nodes
        k0 = np.floor(u).astype(int)
        frac = u - k0
        self.interp_index = np.stack([k0 % n_nodes, (k0 + 1) % n_nodes], axis=1)
        self.interp_weight = np.stack([1 - frac, frac], axis=1)

    @property
    def size(self) -> int:
        return len(self.node)

    def beam_edges(self) -> np.ndarray:
        """Edges in ``u = sin(angle)`` of the direction cells of every angle node.

        Cell ``q`` carries exactly the normalised flux weight of node ``q``.
        """
        vm = self.vm
        fw = np.cos(vm.half_angles) * vm.half_angle_weights
        return -1 + 2 * np.concatenate([[0.0], np.cumsum(fw)]) / fw.sum()

    def overlap_matrix(self, balance=True) -> np.ndarray:
        """Cell-overlap footpoint weights (chords x nodes).

        Seen from ``x_i``, boundary cell ``k`` (chart interval of width
        ``2 pi / N`` around node ``k``) subtends an interval of ``u = sin``
        of the angle to the normal; the weight of cell ``k`` for a beam is the
        fraction of the beam's ``u``-interval it covers.  Because ``du``
        equals ``|s.n| ds`` these fractions are exact flux fractions.  With
        ``balance`` the weights are then rescaled (see ``_balance``).
        """
        N = self.n_nodes
        dom = self.domain
        edges_s = self.s[:, None] + np.pi / N * np.array([-1.0, 1.0])[None, :]  # node cells
        ye = dom.chart(edges_s)  # N x 2 x 2
        ue = self.beam_edges()
        na = len(ue) - 1
        W = np.zeros((N, na, N))
        for i in range(N):
            d = self.x[i][None, None, :] - ye
            nrm = np.linalg.norm(d, axis=-1)
            u = np.sum(d * self.tangent[i], axis=-1) / nrm  # N x 2
            lo = np.minimum(u[:, 0], u[:, 1])
            hi = np.maximum(u[:, 0], u[:, 1])
            pieces = [(lo, hi)]
            # own cell: two pieces reaching the grazing directions
            lo_i, hi_i = lo.copy(), hi.copy()
            lo[i], hi[i] = u[i, 0], 1.0
            lo_i[:], hi_i[:] = 0.0, 0.0
            lo_i[i], hi_i[i] = -1.0, u[i, 1]
            pieces.append((lo_i, hi_i))
            for a, b in pieces:
                ov = np.minimum(b[None, :], ue[1:, None]) - np.maximum(a[None, :], ue[:-1, None])
                W[i] += np.clip(ov, 0.0, None)
        W /= np.diff(ue)[None, :, None]
        W /= W.sum(axis=2, keepdims=True)
        if balance:
            W = self._balance(W)
        return W[self.node, self.angle_index]

    def _balance(self, W, tol=1e-14, maxiter=5000):
        """Sinkhorn scaling: unit beam rows and column flux masses ``C w_k``.

        Unit rows keep a wall Maxwellian flux invariant; the column masses
        make the re-emitted flux equal to the absorbed one.  Both hold in the
        continuum through the reciprocity ``J(x,y) = J(y,x)``.
        """
        vm = self.vm
        fw = np.cos(vm.half_angles) * vm.half_angle_weights
        m = self.w[:, None] * fw[None, :]
        target = self.w * fw.sum()
        for _ in range(maxiter):
            col = np.einsum("ia,iak->k", m, W)
            if np.max(np.abs(col / target - 1)) < tol:
                return W
            W = W * (target / col)[None, None, :]
            W /= W.sum(axis=2, keepdims=True)
        raise RuntimeError("footpoint weight balancing did not converge")

    def interp_matrix(self) -> np.ndarray:
        """Dense (chords x nodes) matrix of footpoint weights."""
        if self.footpoint_rule == "overlap":
            return self.overlap_matrix()
        M = np.zeros((self.size, self.n_nodes))
        rows = np.arange(self.size)
        np.add.at(M, (rows, self.interp_index[:, 0]), self.interp_weight[:, 0])
        np.add.at(M, (rows, self.interp_index[:, 1]), self.interp_weight[:, 1])
        return M

    def node_sum(self, values) -> np.ndarray:
        """Sum chord values over each node (chords are node-major)."""
        values = np.asarray(values)
        return values.reshape(self.n_nodes, self.per_node, *values.shape[1:]).sum(axis=1)

    def flux(self, phi) -> np.ndarray:
        """Outgoing flux per unit surface ``F_k = int_{Gamma_+(x_k)} phi |v.n| m(dv)``."""
        return self.node_sum(self.b * np.asarray(phi))

    def integrate_plus(self, phi) -> complex:
        return np.sum(self.mu * phi)

    def integrate_minus(self, psi_fn) -> float:
        """``int_{Gamma_-} psi dmu_-`` for a callable ``psi(x, v)`` on the local grid."""
        x = self.x[self.node]
        return float(np.sum(self.mu * psi_fn(x, self.v_in)))

    def flux_identity(self, psi_fn):
        """Both sides of ``int_{Gamma_-} psi dmu = int_{Gamma_+} psi(x - tau v, v) dmu``."""
        return self.integrate_minus(psi_fn), float(np.sum(self.mu * psi_fn(self.foot, self.v)))

    def min_chord_time(self) -> float:
        return float(self.tau.min())


class PhaseGrid:
    """Bins of length ``ds`` (time units) along every chord of a boundary grid.

    Bins are available in a flat chord-major layout (``flat_*``, ``offsets``)
    and as padded ``(chords, maxb)`` arrays built on first use; ``padded[mask]``
    equals the flat layout.
    """

    def __init__(self, bgrid: BoundaryGrid, ds=None):
        self.bgrid = bgrid
        if ds is None:
            ds = bgrid.min_chord_time() / 4
        self.ds = float(ds)
        tau = bgrid.tau
        self.nbins = np.maximum(np.ceil(tau / self.ds - 1e-9).astype(int), 1)
        self.maxb = int(self.nbins.max())
        self.offsets = np.concatenate([[0], np.cumsum(self.nbins)])
        self.total_bins = int(self.offsets[-1])
        self.flat_chord = np.repeat(np.arange(len(tau), dtype=np.int32), self.nbins)
        self.flat_m = (np.arange(self.total_bins) - self.offsets[:-1][self.flat_chord]).astype(np.int32)
        self.flat_s_lo = self.flat_m * self.ds
        self.flat_h = np.clip(tau[self.flat_chord] - self.flat_s_lo, 0.0, self.ds)
        self.flat_vol = bgrid.mu[self.flat_chord] * self.flat_h

    @cached_property
    def mask(self):
        return np.arange(self.maxb)[None, :] < self.nbins[:, None]

    @cached_property
    def s_lo(self):
        return np.arange(self.maxb)[None, :] * self.ds * np.ones((self.bgrid.size, 1))

    @cached_property
    def h(self):
        return self.to_padded(self.flat_h)

    @cached_property
    def vol(self):
        return self.to_padded(self.flat_vol)

    @property
    def shape(self):
        return (self.bgrid.size, self.maxb)

    def to_padded(self, flat):
        flat = np.asarray(flat)
        out = np.zeros(self.shape, dtype=flat.dtype)
        out[self.mask] = flat
        return out

    def centers(self):
        """Bin midpoints as (positions, velocities) arrays of shape (..., 2)."""
        bg = self.bgrid
        sc = self.s_lo + 0.5 * self.h
        x = bg.x[bg.node][:, None, :] - sc[..., None] * bg.v[:, None, :]
        v = np.broadcast_to(bg.v[:, None, :], x.shape)
        return x, v

    def flat_eval(self, f, chunk=1 << 20):
        """``f(x, v)`` at the flat bin midpoints, in chunks."""
        bg = self.bgrid
        out = np.empty(self.total_bins)
        for a in range(0, self.total_bins, chunk):
            sl = slice(a, min(a + chunk, self.total_bins))
            j = self.flat_chord[sl]
            sc = self.flat_s_lo[sl] + 0.5 * self.flat_h[sl]
            x = bg.x[bg.node[j]] - sc[:, None] * bg.v[j]
            out[sl] = f(x, bg.v[j])
        return out

    def speed_weight(self, k):
        r = self.bgrid.speed
        return np.maximum(1.0, r ** (-float(k)))


class PhaseDensity:
    """Bin-averaged density on a :class:`PhaseGrid`."""

    def __init__(self, grid: PhaseGrid, values, tag="grid"):
        self.grid = grid
        values = np.asarray(values)
        if values.shape != grid.shape:
            raise ValueError(f"values have shape {values.shape}, expected {grid.shape}")
        self.values = np.where(grid.mask, values, 0)
        self.tag = tag

    @classmethod
    def from_function(cls, grid: PhaseGrid, f):
        x, v = grid.centers()
        vals = f(x.reshape(-1, 2), v.reshape(-1, 2)).reshape(grid.shape)
        return cls(grid, vals)

    @classmethod
    def constant_on_chords(cls, grid: PhaseGrid, u):
        return cls(grid, np.asarray(u)[:, None] * np.ones(grid.shape))

    def mass(self):
        return np.sum(self.grid.vol * self.values)

    def norm(self, k=0) -> float:
        return weighted_norm(self, k)

    def copy(self):
        return PhaseDensity(self.grid, self.values.copy(), self.tag)

    def __add__(self, other):
        return PhaseDensity(self.grid, self.values + _vals(other))

    def __sub__(self, other):
        return PhaseDensity(self.grid, self.values - _vals(other))

    def __mul__(self, a):
        return PhaseDensity(self.grid, self.values * a)

    __rmul__ = __mul__

    def __truediv__(self, a):
        return PhaseDensity(self.grid, self.values / a)

    @property
    def real(self):
        return PhaseDensity(self.grid, self.values.real)


def _vals(o):
    return o.values if isinstance(o, PhaseDensity) else o


def weighted_norm(f, k=0) -> float:
    """``int |f| max(1, |v|^-k)`` for phase densities or Gamma_+ fluxes.

    A flux is passed as a tuple ``(bgrid, values)``.
    """
    if isinstance(f, PhaseDensity):
        g = f.grid
        wk = g.speed_weight(k)[:, None]
        return float(np.sum(g.vol * np.abs(f.values) * wk))
    bgrid, vals = f
    wk = np.maximum(1.0, bgrid.speed ** (-float(k)))
    return float(np.sum(bgrid.mu * np.abs(vals) * wk))


def mass(f: PhaseDensity):
    return f.mass()


def zero_mean_projected(f: PhaseDensity, psi: PhaseDensity | None):
    """``f - rho_f Psi_H``; needs the invariant density (mass one)."""
    if psi is None:
        raise StateError("invariant density has not been computed")
    return f - psi * (f.mass() / psi.mass())


# ---------------------------------------------------------------------------
# integration formulae
def volume_integral(domain: DomainGeometry, vm: VelocityMeasure, h, n_r=48, n_phi=96,
                    n_speed=12, n_dir=64) -> float:
    """``int_{Omega x V} h`` on mapped polar cells and a global polar velocity grid."""
    a, b = domain.axes
    xr, wr = np.polynomial.legendre.leggauss(n_r)
    r = 0.5 * (xr + 1)
    wr = 0.5 * wr
    ph = 2 * np.pi * (np.arange(n_phi) + 0.5) / n_phi
    R, PH = np.meshgrid(r, ph, indexing="ij")
    X = np.stack([a * R * np.cos(PH), b * R * np.sin(PH)], axis=-1).reshape(-1, 2)
    WX = (wr[:, None] * (2 * np.pi / n_phi) * a * b * R).ravel()
    lo, hi = vm.c, 1 / vm.c
    xs, ws = np.polynomial.legendre.leggauss(n_speed)
    sp = 0.5 * (hi - lo) * xs + 0.5 * (hi + lo)
    wsp = 0.5 * (hi - lo) * ws * sp * vm.varpi(sp)
    th = 2 * np.pi * np.arange(n_dir) / n_dir
    S, TH = np.meshgrid(sp, th, indexing="ij")
    V = np.stack([S * np.cos(TH), S * np.sin(TH)], axis=-1).reshape(-1, 2)
    WV = (wsp[:, None] * (2 * np.pi / n_dir) * np.ones_like(TH)).ravel()
    total = 0.0
    for k in range(len(V)):
        vk = np.broadcast_to(V[k], X.shape)
        total += WV[k] * np.sum(WX * h(X, vk))
    return float(total)


def chord_integral(bgrid: BoundaryGrid, h, order=16) -> float:
    """``int_{Gamma_+} dmu int_0^{tau_-} h(x - s v, v) ds`` with Gauss nodes per chord."""
    xg, wg = np.polynomial.legendre.leggauss(order)
    u = 0.5 * (xg + 1)
    s = bgrid.tau[:, None] * u[None, :]
    x = bgrid.x[bgrid.node][:, None, :] - s[..., None] * bgrid.v[:, None, :]
    v = np.broadcast_to(bgrid.v[:, None, :], x.shape)
    vals = h(x.reshape(-1, 2), v.reshape(-1, 2)).reshape(s.shape)
    return float(np.sum(bgrid.mu * bgrid.tau * 0.5 * (vals @ wg)))


def integrate_formula_check(bgrid: BoundaryGrid, h):
    """(volume-side, boundary-side) values of ``int_{Omega x V} h``."""
    return volume_integral(bgrid.domain, bgrid.vm, h), chord_integral(bgrid, h)
