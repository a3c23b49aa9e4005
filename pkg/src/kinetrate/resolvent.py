"""Lifting/trace operators, the full resolvent and boundary functions.

Along a chord ``x(s) = x_i - s v`` (``0 <= s <= tau``) with bin-constant data
every operator is integrated exactly:

* ``G_lam f   = int_0^tau f(s) exp(-lam s) ds``              (trace on Gamma_+)
* ``R_lam f(s) = int_s^tau f(u) exp(-lam (u - s)) du``       (free resolvent)
* ``Xi_lam u(s) = u exp(-lam (tau - s))``                    (lift from Gamma_-)

Outputs are exact bin averages, so mass identities such as
``lam int R_lam f = int f - int G_lam f`` hold to rounding error.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from .phase_grid import PhaseDensity, PhaseGrid
from .transfer import NumericalError, TransferOperator, _check_lambda


class DivergenceError(NumericalError):
    """Raised at ``eta = 0`` for data with nonzero mass (pole of the resolvent)."""


class PreconditionError(ValueError):
    pass


def _series(z, offset, nterms=12):
    out = np.zeros_like(z)
    fact = 1.0
    for k in range(offset):
        fact *= k + 1
    term = np.ones_like(z) / fact
    for n in range(nterms):
        out = out + term
        term = term * (-z) / (n + offset + 1)
    return out


def e1(z):
    """``(1 - exp(-z)) / z`` with its limit 1 at 0."""
    z = np.asarray(z, dtype=complex if np.iscomplexobj(z) else float)
    small = np.abs(z) < 0.05
    zs = np.where(small, 1.0, z)
    return np.where(small, _series(z, 1), -np.expm1(-zs) / zs)


def e2(z):
    """``(z - 1 + exp(-z)) / z^2`` with its limit 1/2 at 0."""
    z = np.asarray(z, dtype=complex if np.iscomplexobj(z) else float)
    small = np.abs(z) < 0.05
    zs = np.where(small, 1.0, z)
    return np.where(small, _series(z, 2), (zs + np.expm1(-zs)) / zs**2)


@dataclass
class BoundaryFunctionResult:
    eta: float
    value: PhaseDensity
    boundary: np.ndarray | None
    method: str
    eps: list = field(default_factory=list)
    ladder: list = field(default_factory=list)
    increments: list = field(default_factory=list)
    extrapolated: PhaseDensity | None = None

    def shrink_factors(self):
        inc = self.increments
        return [inc[i] / inc[i + 1] for i in range(len(inc) - 1)]


class Resolvent:
    """Resolvent machinery on a chord phase grid.

    Parameters
    ----------
    pgrid : PhaseGrid
    op : TransferOperator
        Built on the same boundary grid.
    """

    def __init__(self, pgrid: PhaseGrid, op: TransferOperator):
        if op.bgrid is not pgrid.bgrid:
            raise ValueError("phase grid and transfer operator use different boundary grids")
        self.grid = pgrid
        self.op = op
        self.bgrid = pgrid.bgrid
        self._psi = None
        self._eig0 = None
        self._odd_idx = None

    @property
    def _odd(self):
        # all bins have width ds except the last one of each chord
        if self._odd_idx is None:
            g = self.grid
            self._odd_idx = np.nonzero(g.mask & (g.h != g.ds))
        return self._odd_idx

    def _binfun(self, fun, lam):
        """``fun(lam h)`` on the padded bin array, evaluated once per width."""
        g = self.grid
        full = fun(np.asarray(lam * g.ds))
        out = np.full(g.shape, full, dtype=np.result_type(full, float))
        out[self._odd] = fun(lam * g.h[self._odd])
        return out

    # -- primitive chord operators --------------------------------------------
    def _a(self, lam, f):
        g = self.grid
        return f.values * g.h * self._binfun(e1, lam)

    def _backward(self, lam, a):
        """``J_m = a_m + exp(-lam ds) J_{m+1}`` for every chord."""
        rho = np.exp(-lam * self.grid.ds)
        return lfilter([1.0], [1.0, -rho], a[:, ::-1], axis=1)[:, ::-1]

    def trace_G(self, lam, f: PhaseDensity) -> np.ndarray:
        """``G_lam f`` at every Gamma_+ node."""
        _check_lambda(lam)
        return self._backward(lam, self._a(lam, f))[:, 0]

    def trace_G_derivative(self, lam, f: PhaseDensity, j=1, order=8) -> np.ndarray:
        """``d^j/dlam^j G_lam f = int (-s)^j exp(-lam s) f ds`` (Gauss in each bin)."""
        g = self.grid
        xg, wg = np.polynomial.legendre.leggauss(order)
        s = g.s_lo[..., None] + 0.5 * g.h[..., None] * (xg + 1)
        w = 0.5 * g.h[..., None] * wg
        ker = np.sum(w * (-s) ** j * np.exp(-lam * s), axis=-1)
        return np.sum(f.values * ker, axis=1)

    def resolvent_T0(self, lam, f: PhaseDensity, edges=False):
        """Free resolvent ``R(lam, T_0) f`` (bin averages; optionally edge values).

        Edge values are ``R f`` at ``s = 0, ds, 2 ds, ...`` (shape maxb + 1).
        """
        _check_lambda(lam)
        g = self.grid
        a = self._a(lam, f)
        J = self._backward(lam, a)
        inner = np.zeros_like(J)
        inner[:, :-1] = J[:, 1:]
        avg = f.values * g.h * self._binfun(e2, lam) + self._binfun(e1, lam) * inner
        out = PhaseDensity(g, avg)
        if not edges:
            return out
        ed = np.concatenate([J[:, :1], inner], axis=1)
        return out, ed

    def lift_Xi(self, lam, u, edges=False):
        """``Xi_lam u`` for a Gamma_- value ``u`` given per chord at its footpoint."""
        _check_lambda(lam)
        g = self.grid
        u = np.asarray(u)
        top = np.minimum(g.s_lo + g.h, self.bgrid.tau[:, None])
        ex = np.exp(-lam * (self.bgrid.tau[:, None] - top))
        avg = u[:, None] * ex * self._binfun(e1, lam) * g.mask
        out = PhaseDensity(g, avg)
        if not edges:
            return out
        s_e = np.minimum(np.arange(g.maxb + 1) * g.ds, self.bgrid.tau[:, None])
        return out, u[:, None] * np.exp(-lam * (self.bgrid.tau[:, None] - s_e))

    def H_at_footpoints(self, psi) -> np.ndarray:
        """``(H psi)(x - tau v, v)`` for every chord."""
        return self.op.A0 @ self.op.B(psi)

    def resolvent_one(self, lam, psi):
        return self.op.solve(lam, psi)

    # -- full resolvent ------------------------------------------------------
    def resolvent_TH(self, lam, f: PhaseDensity, edges=False):
        """``R(lam, T_H) f = R_lam f + Xi_lam H (I - M_lam H)^-1 G_lam f``."""
        _check_lambda(lam)
        if lam == 0:
            raise PreconditionError("lambda = 0: use boundary_function")
        psi = self.op.solve(lam, self.trace_G(lam, f))
        u = self.H_at_footpoints(psi)
        if not edges:
            return self.resolvent_T0(lam, f) + self.lift_Xi(lam, u)
        r0, e0 = self.resolvent_T0(lam, f, edges=True)
        x0, ex = self.lift_Xi(lam, u, edges=True)
        return r0 + x0, e0 + ex

    def resolvent_T0_derivative(self, lam, f: PhaseDensity, k=1):
        """``d^k/dlam^k R(lam,T_0) f = (-1)^k k! R_lam^(k+1) f``."""
        g = f
        for _ in range(k + 1):
            g = self.resolvent_T0(lam, g)
        return g * ((-1) ** k * float(np.prod(np.arange(1, k + 1))))

    # -- invariant density ----------------------------------------------------
    def eigenpair0(self):
        if self._eig0 is None:
            self._eig0 = self.op.leading_eigenpair(0.0)
        return self._eig0

    def invariant_density(self) -> PhaseDensity:
        """``Psi_H = Xi_0 H phi`` with ``M_0 H phi = phi``, unit X_0 norm."""
        if self._psi is None:
            self._psi = PhaseDensity(self.grid, self.grid.to_padded(self.invariant_flat()))
        return self._psi

    def invariant_flat(self) -> np.ndarray:
        """Invariant density on the flat bin layout (no padded arrays).

        ``Xi_0 u`` is constant along each chord, so the bin values are the
        footpoint values of ``H phi`` repeated over the chord.
        """
        phi = self.eigenpair0().phi
        if np.any(phi <= 0):
            raise NumericalError("Perron vector is not strictly positive")
        u = np.real(self.H_at_footpoints(phi))
        g = self.grid
        return u[g.flat_chord] / np.sum(g.flat_vol * np.abs(u[g.flat_chord]))

    # -- boundary functions -----------------------------------------------------
    def _zero_mean(self, f, tol=1e-9):
        return abs(f.mass()) <= tol * max(f.norm(0), 1e-300)

    def spectral_boundary_zero(self, f: PhaseDensity):
        """Boundary part of the ``eta = 0`` limit for mean-zero ``f``.

        ``R(1, M_0H(I-P0)) G_0 f - (P'(0) G_0 f + P(0) G_0' f) / nu'(0)``
        with ``G_0' f = -G_0(t_+ f)``.
        """
        op = self.op
        G0 = self.trace_G(0.0, f)
        G0p = self.trace_G_derivative(0.0, f, 1)
        P = op.projection(0.0)
        nup = op.nu_prime_zero(self.eigenpair0().phi)
        t1 = op.deflated_solve(G0)
        t2 = op.projection_derivative_zero(G0) + P.apply(G0p)
        return t1 - t2 / nup

    def boundary_function(self, f: PhaseDensity, eta: float,
                          eps=(0.04, 0.02, 0.01, 0.005), ladder=True) -> BoundaryFunctionResult:
        """Limit of ``R(eps + i eta, T_H) f`` as ``eps -> 0+``."""
        lam = 1j * eta
        if eta == 0:
            if not self._zero_mean(f):
                vals = [e * self.resolvent_TH(e, f).norm(0) for e in eps]
                err = DivergenceError(
                    f"eta = 0 with mass {f.mass():.6g}: eps*||R(eps)f|| = {vals}")
                err.eps = list(eps)
                err.scaled_norms = vals
                raise err
            bnd = self.spectral_boundary_zero(f)
            val = self.resolvent_T0(0.0, f) + self.lift_Xi(0.0, self.H_at_footpoints(bnd))
            method = "spectral-eta=0"
        else:
            bnd = self.op.solve(lam, self.trace_G(lam, f))
            val = self.resolvent_T0(lam, f) + self.lift_Xi(lam, self.H_at_footpoints(bnd))
            method = "direct-eta!=0"
        res = BoundaryFunctionResult(eta, val, bnd, method)
        if ladder:
            self.eps_ladder(f, eta, eps, res)
        return res

    def eps_ladder(self, f, eta, eps, res=None):
        vals = [self.resolvent_TH(e + 1j * eta, f) for e in eps]
        inc = [(vals[i + 1] - vals[i]).norm(0) for i in range(len(vals) - 1)]
        # first-order Richardson from the two smallest eps
        e_a, e_b = eps[-2], eps[-1]
        ext = (vals[-1] * e_a - vals[-2] * e_b) / (e_a - e_b)
        if res is None:
            res = BoundaryFunctionResult(eta, ext, None, "eps-extrapolation")
        res.eps, res.ladder, res.increments, res.extrapolated = list(eps), vals, inc, ext
        return res

    def pole_residue(self, f: PhaseDensity, eps=(0.04, 0.02, 0.01, 0.005)):
        """``eps ||R(eps, T_H) f||_X0`` along a ladder (tends to ``|rho_f|``)."""
        return [e * self.resolvent_TH(e, f).norm(0) for e in eps]

    def iterated_boundary_function(self, f: PhaseDensity, eta: float, j: int):
        """``Upsilon_j(eta) f``: ``j``-fold application of the boundary function.

        ``d^(j-1)/deta^(j-1) R_f(eta) = (-i)^(j-1) (j-1)! Upsilon_j(eta) f``.
        """
        if j < 1:
            raise ValueError("j >= 1")
        g = f
        for _ in range(j):
            if eta == 0 and not self._zero_mean(g):
                raise PreconditionError("iterates need mean-zero data at eta = 0")
            g = self.boundary_function(g, eta, ladder=False).value
        return g

    def boundary_function_scan(self, f, etas, j=1):
        """``sup`` over an eta grid of ``||Upsilon_j(eta) f||_X0`` (and argmax)."""
        norms = [self.iterated_boundary_function(f, e, j).norm(0) for e in etas]
        i = int(np.argmax(norms))
        return norms, float(etas[i]), float(norms[i])
