"""Time evolution: deterministic renewal marcher and Monte Carlo particles.

The marcher stores, for every chord, the mass that will reach the wall in
each future time step (a ring buffer indexed by arrival step).  Free flight
is a shift of the buffer; arrivals are collected per wall node, re-emitted
with the footpoint weights of the transfer operator and deposited at the
arrival step ``tau / dt`` later, split linearly between the two bracketing
steps.  Mass is conserved exactly and the phase-space state is the buffer
divided by the bin volumes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .geometry import DomainGeometry
from .phase_grid import PhaseDensity, PhaseGrid
from .transfer import TransferOperator
from .wall_kernels import DiffuseKernel


class AccuracyError(ValueError):
    """Time step violates ``dt <= tau_min / 4``."""


@dataclass
class DecayCurve:
    times: np.ndarray
    distance: np.ndarray
    mass: np.ndarray


@dataclass
class DecayFit:
    alpha: float
    stderr: float
    ci95: tuple
    intercept: float
    n_points: int
    residual: float = 0.0
    window: tuple = (None, None)


class FitError(ValueError):
    """Too few usable samples in the fit window."""


class RenewalMarcher:
    """Deterministic evolution ``U_H(t)`` on a chord phase grid.

    Every chord keeps a ring of ``nbins + 1`` slots (flat storage), so the
    memory is the number of phase bins and padded arrays are never formed.

    Parameters
    ----------
    pgrid : PhaseGrid
        Its bin length is the time step.
    op : TransferOperator
        Supplies the re-emission weights (columns of ``A_0``).
    f0 : PhaseDensity, callable or ndarray
        Initial density: bin averages, ``f(x, v)`` sampled at bin midpoints,
        or flat bin values.
    laplace : sequence of float
        Rates ``lam >= 0`` for which ``int_0^t exp(-lam s) U_H(s) f0 ds`` is
        accumulated (``0`` gives the Cesaro integral).
    """

    def __init__(self, pgrid: PhaseGrid, op: TransferOperator, f0, laplace=()):
        bg = pgrid.bgrid
        if op.bgrid is not bg:
            raise ValueError("phase grid and transfer operator use different boundary grids")
        self.dt = pgrid.ds
        if self.dt > bg.min_chord_time() / 4 * (1 + 1e-12):
            raise AccuracyError(f"dt = {self.dt:.3g} exceeds tau_min/4 = {bg.min_chord_time() / 4:.3g}")
        self.grid = pgrid
        self.op = op
        self.bgrid = bg
        n = bg.size
        # emission fractions: node k sends A'[j, k] of its arrivals into chord j
        self.emit = (bg.mu[:, None] * op.A0) / bg.w[None, :]
        self.q = pgrid.nbins - 1
        self.r = np.clip(bg.tau / self.dt - self.q, 0.0, 1.0)
        self.L = pgrid.nbins + 1
        self.roff = np.concatenate([[0], np.cumsum(self.L)])[:-1]
        self._fr = self.roff[pgrid.flat_chord]
        self._fL = self.L[pgrid.flat_chord]
        self.buf = np.zeros(int(self.L.sum()))
        vals = self._flat_values(f0)
        self.initial = vals * pgrid.flat_vol
        self.buf[self._fr + pgrid.flat_m] = self.initial
        self.step_index = 0
        self._by_len = np.argsort(-pgrid.nbins, kind="stable")
        self._sorted_nb = pgrid.nbins[self._by_len]
        self._acc = {}
        for lam in laplace:
            lam = float(lam)
            if lam < 0:
                raise ValueError("Laplace rate must be >= 0")
            if lam * bg.tau.max() > 30:
                raise ValueError("Laplace rate too large for the running-sum scheme")
            self._acc[lam] = {"C": np.zeros(n), "early": np.zeros(pgrid.total_bins),
                              "last": np.zeros(n)}

    def _flat_values(self, f):
        g = self.grid
        if isinstance(f, PhaseDensity):
            return np.real(f.values[g.mask])
        if callable(f):
            return g.flat_eval(f)
        f = np.asarray(f, dtype=float)
        if f.shape != (g.total_bins,):
            raise ValueError("flat initial data has the wrong length")
        return f

    @property
    def time(self) -> float:
        return self.step_index * self.dt

    def mass(self) -> float:
        return float(self.buf.sum())

    def _slot(self, t):
        """Flat slot of every chord for absolute step ``t`` (array or scalar)."""
        return self.roff + np.mod(t, self.L)

    def flat_masses(self) -> np.ndarray:
        """Mass per bin at the current time (flat layout)."""
        return self.buf[self._fr + (self.step_index + self.grid.flat_m) % self._fL]

    def masses(self) -> np.ndarray:
        return self.grid.to_padded(self.flat_masses())

    def flat_density(self) -> np.ndarray:
        vol = self.grid.flat_vol
        return np.where(vol > 0, self.flat_masses() / np.where(vol > 0, vol, 1.0), 0.0)

    def state(self) -> PhaseDensity:
        return PhaseDensity(self.grid, self.grid.to_padded(self.flat_density()))

    def distance(self, target=None, k=0) -> float:
        """``||U_H(t) f0 - target||`` in ``X_k`` (target: PhaseDensity or flat values)."""
        Q = self.flat_masses()
        if target is not None:
            Q = Q - self._flat_values(target) * self.grid.flat_vol
        wk = self.grid.speed_weight(k)[self.grid.flat_chord]
        return float(np.sum(np.abs(Q) * wk))

    def step(self, nsteps=1):
        bg = self.bgrid
        q, r = self.q, self.r
        for _ in range(nsteps):
            n = self.step_index
            ia = self._slot(n)
            arr = self.buf[ia]
            self.buf[ia] = 0.0
            for lam, acc in self._acc.items():
                e = np.exp(-lam * n * self.dt)
                # the last bin still receives deposits, so it is summed directly
                acc["last"] += e * self.buf[self._slot(n + q)]
                acc["C"] += e * arr
                cnt = np.searchsorted(-self._sorted_nb, -n, side="left")
                if cnt:
                    ch = self._by_len[:cnt]
                    acc["early"][self.grid.offsets[ch] + n] = acc["C"][ch]
            D = self.emit @ bg.node_sum(arr)
            self.buf[self._slot(n + q)] += (1 - r) * D
            self.buf[self._slot(n + q + 1)] += r * D
            self.step_index = n + 1
        return self

    def advance_to(self, t):
        n = int(round(t / self.dt))
        if n < self.step_index:
            raise ValueError("cannot march backwards")
        return self.step(n - self.step_index)

    def flat_time_integral(self, lam=0.0) -> np.ndarray:
        """Trapezoid ``int_0^t exp(-lam s) U_H(s) f0 ds`` as flat bin masses."""
        lam = float(lam)
        if lam not in self._acc:
            raise KeyError(f"rate {lam} was not registered at construction")
        acc = self._acc[lam]
        g = self.grid
        N, dt = self.step_index, self.dt
        ch, m = g.flat_chord, g.flat_m
        start = g.offsets[:-1][ch]
        # bins m < q hold final arrival masses, so sum_n e^{-lam n dt} Q^n[m]
        # is a difference of weighted cumulative arrivals Ctot(t)
        fut = self.flat_masses() * np.exp(-lam * dt * (N + m))
        cs = np.cumsum(fut)
        base = np.concatenate([[0.0], cs])[g.offsets[:-1]]
        cum = acc["C"][ch] + cs - base[ch]  # Ctot(N + m)
        t = m - 1
        lower = np.zeros(g.total_bins)
        e_sel = (t >= 0) & (t < N)
        lower[e_sel] = acc["early"][start[e_sel] + t[e_sel]]
        c_sel = t >= N
        lower[c_sel] = cum[start[c_sel] + t[c_sel] - N]
        S = np.exp(lam * dt * m) * (cum - lower)
        last = acc["last"] + np.exp(-lam * N * dt) * self.buf[self._slot(N + self.q)]
        S[g.offsets[1:] - 1] = last
        return dt * S - 0.5 * dt * (self.initial + np.exp(-lam * N * dt) * self.flat_masses())

    def time_integral(self, lam=0.0) -> PhaseDensity:
        g = self.grid
        S = self.flat_time_integral(lam)
        vol = np.where(g.flat_vol > 0, g.flat_vol, 1.0)
        return PhaseDensity(g, g.to_padded(np.where(g.flat_vol > 0, S / vol, 0.0)))

    def cesaro(self) -> PhaseDensity:
        return self.time_integral(0.0) / self.time


def decay_curve(marcher: RenewalMarcher, times, target=None, k=0) -> DecayCurve:
    """``||U_H(t) f0 - target||_{X_k}`` at the requested times (default target 0)."""
    dist, mass, ts = [], [], []
    for t in times:
        marcher.advance_to(t)
        dist.append(marcher.distance(target, k))
        mass.append(marcher.mass())
        ts.append(marcher.time)
    return DecayCurve(np.array(ts), np.array(dist), np.array(mass))


def fit_decay_exponent(times, values, window=None, floor=0.0, min_points=8,
                       floor_factor=3.0) -> DecayFit:
    """Least-squares slope ``alpha`` of ``log d = c - alpha log t``.

    Samples outside ``window = (t_min, t_max)`` or within ``floor_factor``
    times the noise ``floor`` are dropped; fewer than ``min_points`` usable
    samples raise :class:`FitError`.
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float)
    lo, hi = window if window is not None else (None, None)
    sel = np.ones(len(t), bool)
    if lo is not None:
        sel &= t >= lo * (1 - 1e-12)
    if hi is not None:
        sel &= t <= hi * (1 + 1e-12)
    sel &= y > max(floor_factor * floor, 0.0)
    n = int(sel.sum())
    if n < max(min_points, 3):
        raise FitError(f"{n} usable samples in window {window} above floor {floor:.3g}; "
                       f"need {min_points}")
    lt, ly = np.log(t[sel]), np.log(y[sel])
    res = stats.linregress(lt, ly)
    tq = stats.t.ppf(0.975, n - 2)
    a = -res.slope
    rms = float(np.sqrt(np.mean((ly - res.intercept - res.slope * lt) ** 2)))
    return DecayFit(float(a), float(res.stderr), (a - tq * res.stderr, a + tq * res.stderr),
                    float(res.intercept), n, rms, (lo, hi))


def geometric_times(t0, t1, ratio=1.25):
    n = int(np.floor(np.log(t1 / t0) / np.log(ratio))) + 1
    t = t0 * ratio ** np.arange(n)
    if t[-1] < t1 * (1 - 1e-12):
        t = np.append(t, t1)
    return t


# ---------------------------------------------------------------------------
# Monte Carlo
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLD = np.uint64(0x9E3779B97F4A7C15)


def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def counter_uniform(seed, pid, event, draw):
    """Counter-based uniforms in (0, 1) from ``(seed, particle, event, draw)``.

    A stateless SplitMix64 hash: results do not depend on how particles are
    partitioned across workers or on the processing order.
    """
    with np.errstate(over="ignore"):
        z = _mix(np.uint64(seed) * _GOLD + np.uint64(0x632BE59BD9B4E019))
        z = _mix(z ^ (np.asarray(pid, dtype=np.uint64) * _GOLD))
        z = _mix(z ^ (np.asarray(event, dtype=np.uint64) * _M1))
        z = _mix(z ^ (np.uint64(draw) + np.uint64(1)) * _M2)
    return ((z >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


@dataclass
class Particles:
    x: np.ndarray
    v: np.ndarray
    pid: np.ndarray
    events: np.ndarray
    weight: np.ndarray

    def __len__(self):
        return len(self.pid)

    def total_weight(self) -> float:
        return float(np.sum(self.weight))


def _speed_table(kernel, power):
    vm = kernel.vm
    r = np.linspace(vm.c, 1 / vm.c, 4097)
    dens = r**power * vm.varpi(r) * kernel.profile(0.0, r)
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(r))])
    return r, cdf / cdf[-1]


def sample_mixture(domain: DomainGeometry, kernel: DiffuseKernel, n, parts, seed=0,
                   first_id=0) -> Particles:
    """Particles for ``f0 = sum_i s_i m_i g_i(x) P(v)`` with signed weights.

    ``parts`` is a list of ``(sign, mass, g, g_max)`` with ``g`` a spatial
    density profile (callable on (n, 2) arrays, bounded by ``g_max``).  The
    velocity law ``P`` is isotropic with speed density ``r^(d-1) w(r) G(r)``.
    Particle counts are proportional to the masses.
    """
    masses = np.array([p[1] for p in parts], dtype=float)
    counts = np.floor(n * masses / masses.sum()).astype(int)
    counts[np.argmax(masses)] += n - counts.sum()
    xs, ws = [], []
    start = first_id
    for (sign, mass, g, gmax), cnt in zip(parts, counts):
        pid = np.arange(start, start + cnt, dtype=np.uint64)
        x = np.empty((cnt, 2))
        todo = np.arange(cnt)
        attempt = 0
        ax = domain.axes
        while len(todo):
            u1 = counter_uniform(seed, pid[todo], attempt, 100)
            u2 = counter_uniform(seed, pid[todo], attempt, 101)
            u3 = counter_uniform(seed, pid[todo], attempt, 104)
            cand = np.stack([(2 * u1 - 1) * ax[0], (2 * u2 - 1) * ax[1]], axis=1)
            ok = domain.contains(cand)
            ok[ok] &= u3[ok] * gmax < g(cand[ok])
            x[todo[ok]] = cand[ok]
            todo = todo[~ok]
            attempt += 1
        xs.append(x)
        ws.append(np.full(cnt, sign * mass / max(cnt, 1)))
        start += cnt
    pid = np.arange(first_id, start, dtype=np.uint64)
    rr, cdf = _speed_table(kernel, domain.d - 1)
    sp = np.interp(counter_uniform(seed, pid, 0, 102), cdf, rr)
    ang = 2 * np.pi * counter_uniform(seed, pid, 0, 103)
    v = sp[:, None] * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    return Particles(np.concatenate(xs), v, pid, np.zeros(len(pid), dtype=np.uint64),
                     np.concatenate(ws))


def sample_equilibrium(domain: DomainGeometry, kernel: DiffuseKernel, n, seed=0,
                       region=None) -> Particles:
    """Unit-mass particles uniform in ``region`` with the wall speed law."""
    g = (lambda x: np.ones(len(x))) if region is None else (lambda x: region(x).astype(float))
    return sample_mixture(domain, kernel, n, [(1.0, 1.0, g, 1.0)], seed)


def phase_cells(domain: DomainGeometry, x, v, n_r=4, n_phi=8, n_dir=4):
    """Cell index on mapped polar position cells times direction sectors."""
    a = domain.axes
    y = x / a
    rho = np.minimum(np.linalg.norm(y, axis=-1), 1 - 1e-15)
    ir = np.minimum((rho**2 * n_r).astype(int), n_r - 1)  # equal-area rings
    ip = (np.mod(np.arctan2(y[..., 1], y[..., 0]), 2 * np.pi) / (2 * np.pi) * n_phi).astype(int) % n_phi
    idir = (np.mod(np.arctan2(v[..., 1], v[..., 0]), 2 * np.pi) / (2 * np.pi) * n_dir).astype(int) % n_dir
    return (ir * n_phi + ip) * n_dir + idir, n_r * n_phi * n_dir


def mc_histogram(p: Particles, domain, **cells):
    idx, nc = phase_cells(domain, p.x, p.v, **cells)
    w = np.bincount(idx, weights=p.weight, minlength=nc)
    w2 = np.bincount(idx, weights=p.weight**2, minlength=nc)
    return w, np.sqrt(w2)


def marcher_histogram(pgrid: PhaseGrid, flat_masses, **cells):
    bg = pgrid.bgrid
    sc = pgrid.flat_s_lo + 0.5 * pgrid.flat_h
    j = pgrid.flat_chord
    x = bg.x[bg.node[j]] - sc[:, None] * bg.v[j]
    idx, nc = phase_cells(bg.domain, x, bg.v[j], **cells)
    return np.bincount(idx, weights=flat_masses, minlength=nc)


def mc_evolve(p: Particles, kernel: DiffuseKernel, t_end, seed=0, t0=0.0) -> Particles:
    """Move particles exactly to time ``t_end`` with diffuse re-emission at walls."""
    if not kernel.x_independent:
        raise NotImplementedError("MC re-emission implemented for x-independent walls")
    domain = kernel.domain
    table = kernel.speed_sampler()
    x, v, ev = p.x.copy(), p.v.copy(), p.events.copy()
    t = np.full(len(p), float(t0))
    active = np.arange(len(p))
    while len(active):
        xa, va = x[active], v[active]
        th = domain.exit_time(xa, va, "forward")
        rem = t_end - t[active]
        done = th >= rem
        idx = active[done]
        x[idx] = xa[done] + rem[done, None] * va[done]
        t[idx] = t_end
        act = active[~done]
        if len(act) == 0:
            break
        y = domain.snap(xa[~done] + th[~done, None] * va[~done])
        t[act] += th[~done]
        ev[act] += np.uint64(1)
        us = counter_uniform(seed, p.pid[act], ev[act], 0)
        ua = counter_uniform(seed, p.pid[act], ev[act], 1)
        x[act] = y
        v[act] = kernel.sample_reemission(y, us, ua, table)
        active = act
    return Particles(x, v, p.pid.copy(), ev, p.weight.copy())
