"""Exact geometry of conic domains (disk, ellipse, ball / ellipsoid).

Every domain is an axis-aligned ellipsoid ``sum((x_i / a_i)**2) < 1`` so that
travel times are roots of a quadratic and never need iterative ray tracing.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SURFACE_TOL = 1e-9


class DomainError(ValueError):
    """Raised for points or velocities outside the admissible set."""


@dataclass(frozen=True)
class BoundaryPoint:
    param: tuple
    position: np.ndarray
    normal: np.ndarray


@dataclass(frozen=True)
class DomainGeometry:
    """Axis-aligned ellipsoid centred at the origin.

    Parameters
    ----------
    semi_axes : tuple of float
        Two entries give a planar domain, three a solid one.
    shape : str
        Informational tag ("disk", "ellipse", "ball").
    """

    semi_axes: tuple
    shape: str = "ellipse"

    def __post_init__(self):
        ax = tuple(float(a) for a in self.semi_axes)
        if len(ax) not in (2, 3) or min(ax) <= 0:
            raise DomainError(f"invalid semi axes {self.semi_axes}")
        object.__setattr__(self, "semi_axes", ax)

    @property
    def d(self) -> int:
        return len(self.semi_axes)

    @property
    def axes(self) -> np.ndarray:
        return np.asarray(self.semi_axes)

    @property
    def diameter(self) -> float:
        return 2.0 * max(self.semi_axes)

    @property
    def volume(self) -> float:
        a = self.axes
        if self.d == 2:
            return float(np.pi * a[0] * a[1])
        return float(4.0 / 3.0 * np.pi * np.prod(a))

    # -- implicit surface -------------------------------------------------
    def level(self, x) -> np.ndarray:
        """Value of ``sum((x_i/a_i)^2) - 1`` (negative inside)."""
        x = np.asarray(x, dtype=float)
        return np.sum((x / self.axes) ** 2, axis=-1) - 1.0

    def contains(self, x, tol=SURFACE_TOL) -> np.ndarray:
        return self.level(x) <= tol

    def on_surface(self, x, tol=SURFACE_TOL) -> np.ndarray:
        return np.abs(self.level(x)) <= tol

    def outward_normal(self, x) -> np.ndarray:
        """Unit outward normal at boundary point(s) ``x``."""
        x = np.asarray(x, dtype=float)
        if not np.all(self.on_surface(x)):
            raise DomainError("point is not on the boundary")
        g = x / self.axes**2
        return g / np.linalg.norm(g, axis=-1, keepdims=True)

    def snap(self, x) -> np.ndarray:
        """Radially project points lying within tolerance onto the surface."""
        x = np.asarray(x, dtype=float)
        r = np.sqrt(self.level(x) + 1.0)
        return x / r[..., None]

    # -- travel times -----------------------------------------------------
    def _quad(self, x, v):
        a2 = self.axes**2
        A = np.sum(v * v / a2, axis=-1)
        B = np.sum(x * v / a2, axis=-1)
        C = np.sum(x * x / a2, axis=-1) - 1.0
        return A, B, C

    def exit_time(self, x, v, direction="forward") -> np.ndarray:
        """Travel time ``t_+`` (forward) or ``t_-`` (backward).

        For ``x`` on the boundary this is ``tau_+`` / ``tau_-`` and vanishes on
        the side where the particle leaves immediately.
        """
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        if direction not in ("forward", "backward"):
            raise DomainError(f"unknown direction {direction!r}")
        if np.any(np.linalg.norm(v, axis=-1) == 0):
            raise DomainError("zero velocity")
        if np.any(self.level(x) > SURFACE_TOL):
            raise DomainError("point outside the closed domain")
        if direction == "backward":
            v = -v
        A, B, C = self._quad(x, v)
        C = np.minimum(C, 0.0)
        disc = np.sqrt(B * B - A * C)
        # stable root: -C/(B+disc) when B > 0 avoids cancellation
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(B > 0, -C / (B + disc), (disc - B) / A)
        return np.where(np.isfinite(t), t, 0.0)

    def footpoint(self, x, v) -> np.ndarray:
        """Backward exit point ``x - t_-(x,v) v`` snapped onto the surface."""
        t = self.exit_time(x, v, "backward")
        return self.snap(np.asarray(x) - t[..., None] * np.asarray(v))

    # -- charts -----------------------------------------------------------
    def chart(self, s) -> np.ndarray:
        """Boundary point for chart parameter ``s``.

        2D: ``s`` is the eccentric angle.  3D: ``s = (theta, phi)`` with
        polar angle ``theta`` and azimuth ``phi`` (last axis of size 2).
        """
        a = self.axes
        s = np.asarray(s, dtype=float)
        if self.d == 2:
            return np.stack([a[0] * np.cos(s), a[1] * np.sin(s)], axis=-1)
        th, ph = s[..., 0], s[..., 1]
        return np.stack(
            [a[0] * np.sin(th) * np.cos(ph), a[1] * np.sin(th) * np.sin(ph),
             a[2] * np.cos(th)], axis=-1)

    def chart_param(self, x) -> np.ndarray:
        """Inverse of :meth:`chart` (2D returns angle in ``[0, 2pi)``)."""
        x = np.asarray(x, dtype=float) / self.axes
        if self.d == 2:
            return np.mod(np.arctan2(x[..., 1], x[..., 0]), 2 * np.pi)
        th = np.arccos(np.clip(x[..., 2], -1, 1))
        ph = np.mod(np.arctan2(x[..., 1], x[..., 0]), 2 * np.pi)
        return np.stack([th, ph], axis=-1)

    def surface_weight(self, s) -> np.ndarray:
        """Density of the surface measure with respect to the chart parameters."""
        a = self.axes
        s = np.asarray(s, dtype=float)
        if self.d == 2:
            return np.hypot(a[0] * np.sin(s), a[1] * np.cos(s))
        th, ph = s[..., 0], s[..., 1]
        st, ct, sp, cp = np.sin(th), np.cos(th), np.sin(ph), np.cos(ph)
        dth = np.stack([a[0] * ct * cp, a[1] * ct * sp, -a[2] * st], axis=-1)
        dph = np.stack([-a[0] * st * sp, a[1] * st * cp, 0 * st], axis=-1)
        return np.linalg.norm(np.cross(dth, dph), axis=-1)

    def boundary_point(self, s) -> BoundaryPoint:
        x = self.chart(s)
        return BoundaryPoint(tuple(np.atleast_1d(s)), x, self.outward_normal(x))

    def boundary_quadrature(self, n: int):
        """Nodes, chart parameters and weights of a surface quadrature.

        2D uses the periodic trapezoid rule with ``n`` nodes; 3D uses
        Gauss-Legendre in ``cos(theta)`` (``n`` nodes) times a ``2n`` point
        trapezoid rule in azimuth.
        """
        if self.d == 2:
            s = 2 * np.pi * np.arange(n) / n
            return self.chart(s), s, self.surface_weight(s) * (2 * np.pi / n)
        xg, wg = np.polynomial.legendre.leggauss(n)
        th = np.arccos(xg)
        ph = 2 * np.pi * np.arange(2 * n) / (2 * n)
        TH, PH = np.meshgrid(th, ph, indexing="ij")
        s = np.stack([TH.ravel(), PH.ravel()], axis=-1)
        # d(theta) = d(cos)/sin(theta)
        jac = self.surface_weight(s) / np.sin(s[:, 0])
        w = jac * np.repeat(wg, 2 * n) * (2 * np.pi / (2 * n))
        return self.chart(s), s, w

    def surface_measure(self, n: int = 256) -> float:
        return float(np.sum(self.boundary_quadrature(n)[2]))


def make_domain(shape="disk", semi_axes=None) -> DomainGeometry:
    """Build a domain from a config-style descriptor."""
    if shape == "disk":
        r = 1.0 if not semi_axes else float(semi_axes[0])
        return DomainGeometry((r, r), "disk")
    if shape == "ellipse":
        a, b = semi_axes if semi_axes else (2.0, 1.0)
        return DomainGeometry((a, b), "ellipse")
    if shape == "ball":
        if not semi_axes:
            semi_axes = (1.0,)
        if len(semi_axes) == 1:
            semi_axes = tuple(semi_axes) * 3
        return DomainGeometry(tuple(semi_axes), "ball")
    raise DomainError(f"unknown shape {shape!r}")
