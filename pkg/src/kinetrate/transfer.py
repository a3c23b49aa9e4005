"""Boundary transfer operator ``M_lambda H`` on the Gamma_+ grid.

With a re-emission law independent of the incoming velocity the discrete
operator factors as ``M_lambda H = A_lambda B`` where

* ``B`` (nodes x chords) takes the outgoing flux ``F_k`` at every node and
* ``A_lambda`` (chords x nodes) re-emits it at the footpoint ``y = x - tau v``
  (cell-overlap weights in the chart) and damps by ``exp(-lambda tau)``.

The nonzero spectrum of ``A B`` equals that of the small matrix
``K_lambda = B A_lambda``; resolvents follow from the Woodbury identity
``(I - A B)^-1 = I + A (I - K)^-1 B``.  Columns of ``A_0`` are rescaled so
that ``M_0 H`` conserves flux mass exactly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .phase_grid import BoundaryGrid
from .wall_kernels import DiffuseKernel


class NumericalError(RuntimeError):
    """Raised when a numerical procedure fails; carries the best estimate."""

    def __init__(self, msg, estimate=None):
        super().__init__(msg)
        self.estimate = estimate


class SpectralSeparationError(NumericalError):
    pass


class SingularSystemError(NumericalError):
    pass


class ContourError(NumericalError):
    pass


def _check_lambda(lam):
    if np.real(lam) < 0:
        raise ValueError("Re(lambda) must be >= 0")


@dataclass
class SpectralReport:
    radius: float
    nu: complex
    phi: np.ndarray
    phi_star: np.ndarray
    r0: float
    residual: float


class TransferOperator:
    """``M_lambda H`` for all ``lambda`` with ``Re lambda >= 0``.

    Parameters
    ----------
    bgrid : BoundaryGrid
    kernel : DiffuseKernel
    renormalise : bool
        Rescale columns of ``A_0`` to unit flux mass (exact conservation).
    """

    dense_threshold = 5000

    def __init__(self, bgrid: BoundaryGrid, kernel: DiffuseKernel, renormalise=True):
        self.bgrid = bgrid
        self.kernel = kernel
        hk = kernel.node_kernel(bgrid)
        # kernel of node k evaluated at the chord velocity; radial, so the
        # half-space of the neighbouring node does not matter
        Gnode = kernel.profile(bgrid.s[:, None], bgrid.speed[None, :])
        gam = kernel.discrete_gamma(bgrid)
        hnode = (Gnode / gam[:, None]).T  # chords x nodes
        A = bgrid.interp_matrix() * hnode
        self.raw_column_mass = bgrid.mu @ A
        if renormalise:
            A = A * (bgrid.w / self.raw_column_mass)[None, :]
        self.A0 = A
        self.tau = bgrid.tau
        self._hk = hk

    @property
    def size(self) -> int:
        return self.bgrid.size

    # -- assembly --------------------------------------------------------------
    def A(self, lam=0.0) -> np.ndarray:
        _check_lambda(lam)
        if lam == 0:
            return self.A0
        return np.exp(-lam * self.tau)[:, None] * self.A0

    def B(self, phi) -> np.ndarray:
        return self.bgrid.flux(phi)

    def B_matrix(self) -> np.ndarray:
        bg = self.bgrid
        M = np.zeros((bg.n_nodes, bg.size))
        M[bg.node, np.arange(bg.size)] = bg.b
        return M

    def K(self, lam=0.0) -> np.ndarray:
        """Reduced node-to-node matrix ``B A_lambda``."""
        _check_lambda(lam)
        bg = self.bgrid
        wt = bg.b * np.exp(-lam * self.tau) if lam != 0 else bg.b
        return bg.node_sum(wt[:, None] * self.A0)

    def dense(self, lam=0.0) -> np.ndarray:
        return self.A(lam) @ self.B_matrix()

    def apply(self, lam, phi) -> np.ndarray:
        return self.A(lam) @ self.B(phi)

    def dtau_apply(self, lam, phi):
        """``d/dlambda M_lambda H phi = -tau M_lambda H phi``."""
        return -self.tau * self.apply(lam, phi)

    # -- spectra --------------------------------------------------------------
    def eigvals(self, lam=0.0) -> np.ndarray:
        return linalg.eigvals(self.K(lam))

    def spectral_radius(self, lam=0.0, method="reduced", maxiter=5000, tol=1e-12):
        """``max |eig|`` of ``M_lambda H``.

        ``reduced`` uses the node matrix (same nonzero spectrum), ``dense``
        the full chord matrix and ``power`` a normalised power iteration.
        """
        if method == "reduced":
            return float(np.max(np.abs(self.eigvals(lam))))
        if method == "dense":
            if self.size > self.dense_threshold:
                raise NumericalError("grid too large for dense eigensolver")
            return float(np.max(np.abs(linalg.eigvals(self.dense(lam)))))
        return power_radius(lambda x: self.apply(lam, x), self.size, maxiter, tol)

    def leading_eigenpair(self, lam=0.0, r0=0.25) -> SpectralReport:
        """Eigenvalue in ``|z - 1| < r0`` with right/left eigenfunctions.

        ``phi`` is normalised by ``int phi dmu_+ = 1`` and ``phi_star`` by
        ``<phi, phi_star> = int phi conj(phi_star) dmu_+ = 1``.
        """
        K = self.K(lam)
        w, vl, vr = linalg.eig(K, left=True, right=True)
        inside = np.nonzero(np.abs(w - 1) < r0)[0]
        if len(inside) != 1:
            raise SpectralSeparationError(
                f"{len(inside)} eigenvalues inside |z-1|<{r0} at lambda={lam}")
        i = inside[0]
        nu = w[i]
        F = vr[:, i]
        u = vl[:, i].conj()  # u^T K = nu u^T
        phi = self.A(lam) @ F
        bg = self.bgrid
        phi = phi / bg.integrate_plus(phi)
        if lam == 0:
            phi = phi.real
        # left functional l(psi) = u . B psi ; as a function: u_k / w_k
        star = u[bg.node] / bg.w[bg.node]
        ip = np.sum(bg.mu * phi * star)
        star = (star / ip).conj()
        res = np.linalg.norm(self.apply(lam, phi) - nu * phi) / np.linalg.norm(phi)
        return SpectralReport(self.spectral_radius(lam), complex(nu), phi, star, r0, float(res))

    # -- resolvents -------------------------------------------------------------
    def solve(self, lam, psi, tol_mass=1e-9):
        """``x`` with ``(I - M_lambda H) x = psi``.

        At ``lambda = 0`` the system is singular; a mean-zero right-hand side
        is solved on the complement of the Perron vector (deflation with the
        spectral projection).
        """
        _check_lambda(lam)
        psi = np.asarray(psi)
        if lam == 0:
            m = self.bgrid.integrate_plus(psi)
            scale = max(np.sum(self.bgrid.mu * np.abs(psi)), 1e-300)
            if abs(m) > tol_mass * scale:
                raise SingularSystemError("lambda = 0 with nonzero flux mass")
            return self.deflated_solve(psi)
        A = self.A(lam)
        K = self.K(lam)
        y = linalg.solve(np.eye(len(K)) - K, self.B(psi))
        x = psi + A @ y
        return x

    def neumann_solve(self, lam, psi, tol=1e-12, maxiter=100000):
        """Neumann series ``sum (M_lambda H)^n psi`` (matrix-free mode)."""
        x = np.array(psi, dtype=complex)
        term = x.copy()
        nrm = np.sum(self.bgrid.mu * np.abs(psi))
        for _ in range(maxiter):
            term = self.apply(lam, term)
            x += term
            if np.sum(self.bgrid.mu * np.abs(term)) < tol * nrm:
                return x
        raise NumericalError("Neumann series did not converge", x)

    def projection(self, lam=0.0, r0=0.25, nodes=32):
        return SpectralProjection(self, lam, r0, nodes)

    def deflated_solve(self, psi, r0=0.25, nodes=32):
        """``(I - M_0 H (I - P(0)))^-1 psi`` with ``P(0)`` from the contour."""
        P = self.projection(0.0, r0, nodes)
        K = self.K(0.0)
        n = len(K)
        # M0H (I - P) = A [ (1-c) I - K Q ] B
        C = (1 - P.c) * np.eye(n) - K @ P.Q
        Bpsi = self.B(psi)
        y = linalg.solve(np.eye(n) - K @ C, Bpsi)
        x = psi + self.A0 @ (C @ y)
        return x.real if np.isrealobj(psi) else x

    def projection_derivative_zero(self, psi, r0=0.25, nodes=32):
        """``P'(0) psi = -(1/2 pi i) oint R(z) (tau M_0 H) R(z) psi dz``."""
        zs, wts = contour_nodes(r0, nodes)
        out = np.zeros(self.size, dtype=complex)
        K = self.K(0.0)
        n = len(K)
        for z, wq in zip(zs, wts):
            G = linalg.lu_factor(z * np.eye(n) - K)

            def R(v):
                return (v + self.A0 @ linalg.lu_solve(G, self.B(v))) / z

            out -= wq * R(self.tau * self.apply(0.0, R(psi)))
        return out.real if np.isrealobj(psi) else out

    def nu_prime_zero(self, phi0=None) -> float:
        """``nu'(0) = -int tau_- phi_0 dmu_+`` (``phi_0`` of unit flux mass)."""
        if phi0 is None:
            phi0 = self.leading_eigenpair(0.0).phi
        return float(-np.sum(self.bgrid.mu * self.tau * phi0).real)

    # -- norms ------------------------------------------------------------------
    def l1_norm(self, T) -> float:
        """Operator norm on ``L^1(Gamma_+, mu)`` of a dense chord matrix."""
        mu = self.bgrid.mu
        return float(np.max((mu @ np.abs(T)) / mu))

    def square_norm(self, lam) -> float:
        """``||(M_lambda H)^2||`` on ``L^1(Gamma_+)`` without forming dense matrices."""
        A = self.A(lam)
        AK = A @ self.K(lam)
        return float(np.max((self.bgrid.mu @ np.abs(AK)) / self.bgrid.w))

    def weighted_H_norm(self) -> float:
        """Discrete ``||H||`` from ``L^1_+`` to ``Y_1^-`` (weight ``max(1, 1/|v|)``)."""
        wk = np.maximum(1.0, 1.0 / self.bgrid.speed)
        return float(np.max(self.bgrid.mu @ (wk[:, None] * self.A0) / self.bgrid.w))


class SpectralProjection:
    """Contour-integral projection ``P = A Q B + c I`` for ``M_lambda H = A B``."""

    def __init__(self, op: TransferOperator, lam, r0=0.25, nodes=32, cond_max=1e12):
        self.op = op
        self.lam = lam
        K = op.K(lam)
        n = len(K)
        zs, wts = contour_nodes(r0, nodes)
        Q = np.zeros((n, n), dtype=complex)
        c = 0.0j
        for z, wq in zip(zs, wts):
            Mz = z * np.eye(n) - K
            if np.linalg.cond(Mz) > cond_max:
                raise ContourError(f"contour node {z} is too close to the spectrum")
            Q += wq / z * linalg.solve(Mz, np.eye(n))
            c += wq / z
        self.Q = Q
        self.c = c
        self.A = op.A(lam)

    def apply(self, psi):
        return self.A @ (self.Q @ self.op.B(psi)) + self.c * np.asarray(psi)

    def dense(self):
        return self.A @ self.Q @ self.op.B_matrix() + self.c * np.eye(self.op.size)

    def small(self):
        """Matrix of ``P`` restricted to the range of ``A`` (node coordinates)."""
        return self.Q @ self.op.K(self.lam) + self.c * np.eye(len(self.Q))


def contour_nodes(r0=0.25, nodes=32):
    """Trapezoid nodes on ``|z - 1| = r0`` with weights for ``(1/2 pi i) oint``."""
    th = 2 * np.pi * (np.arange(nodes) + 0.5) / nodes
    e = r0 * np.exp(1j * th)
    return 1 + e, e / nodes


def power_radius(apply, n, maxiter=5000, tol=1e-12, seed=0):
    """Spectral radius estimate ``||T^k x||^(1/k)`` with ratio acceleration."""
    rng = np.random.default_rng(seed)
    x = rng.random(n) + 0.1
    x /= np.linalg.norm(x)
    est = prev = 0.0
    for k in range(1, maxiter + 1):
        y = apply(x)
        est = np.linalg.norm(y)
        if est == 0:
            return 0.0
        x = y / est
        if k > 10 and abs(est - prev) < tol * est:
            return float(est)
        prev = est
    raise NumericalError("power iteration did not converge", float(est))


# ---------------------------------------------------------------------------
class BoundaryOperator:
    """Node-to-node operator ``L(lambda)`` with resolved speed integrals.

    ``(L F)(x) = int J(x,y) k_lambda(|x-y|, y) F(y) pi(dy)`` where
    ``k_lambda(r, y) = int r'^d w(r') h(y, r') exp(-lambda r / r') dr'``.
    Its nonzero spectrum and L^1 norms coincide with those of ``M_lambda H``
    in the continuum; the speed integral is done in ``u = 1/r'`` with enough
    Gauss nodes to resolve ``exp(-i eta r u)``.
    """

    def __init__(self, bgrid: BoundaryGrid, kernel: DiffuseKernel):
        from .chv import jacobian_values

        self.bgrid = bgrid
        self.kernel = kernel
        dom = bgrid.domain
        x = bgrid.x
        n = bgrid.n_nodes
        X = np.repeat(x, n, axis=0)
        Y = np.tile(x, (n, 1))
        off = np.any(X != Y, axis=1)
        J = np.zeros(n * n)
        J[off], _ = jacobian_values(dom, X[off], Y[off])
        self.J = J.reshape(n, n)
        self.r = np.linalg.norm(X - Y, axis=1).reshape(n, n)
        self.gamma = kernel.gamma(bgrid.s)

    def matrix(self, lam=0.0, min_nodes=64) -> np.ndarray:
        vm = self.bgrid.vm
        c = vm.c
        span = 1 / c - c
        umax = self.r.max() * (1 / c)
        nq = int(min_nodes + 2.0 * abs(np.imag(lam)) * umax * span / np.pi)
        xg, wg = np.polynomial.legendre.leggauss(nq)
        # u = 1/r' in (c, 1/c); dr' = du / u^2
        u = 0.5 * (1 / c - c) * xg + 0.5 * (1 / c + c)
        wu = 0.5 * (1 / c - c) * wg
        rp = 1 / u
        d = self.bgrid.domain.d
        s = self.bgrid.s
        if self.kernel.x_independent:
            G = self.kernel.profile(0.0, rp)[None, :] * np.ones((len(s), 1))
        else:
            G = self.kernel.profile(s[:, None], rp[None, :])
        base = (rp**d * vm.varpi(rp) / u**2 * wu)[None, :] * G / self.gamma[:, None]  # y x q
        E = np.exp(-lam * self.r[:, :, None] * u[None, None, :])  # x y q
        k = np.einsum("xyq,yq->xy", E, base)
        return self.J * k * self.bgrid.w[None, :]

    def l1_norm(self, lam=0.0) -> float:
        L = self.matrix(lam)
        w = self.bgrid.w
        return float(np.max((w @ np.abs(L)) / w))

    def spectral_radius(self, lam=0.0) -> float:
        return float(np.max(np.abs(linalg.eigvals(self.matrix(lam)))))


def high_frequency_decay(op: TransferOperator, etas, boundary: BoundaryOperator | None = None):
    """Table of ``||(M_{i eta} H)^2||`` (resolved boundary form) per ``eta``.

    Returns rows ``(eta, grid_norm, boundary_norm)``.  The grid column uses
    the chord quadrature, whose finitely many velocities cannot cancel the
    oscillating phases; the boundary column resolves the speed integral.
    """
    if boundary is None:
        boundary = BoundaryOperator(op.bgrid, op.kernel)
    rows = []
    for eta in etas:
        rows.append((float(eta), op.square_norm(1j * eta), boundary.l1_norm(1j * eta)))
    return rows
