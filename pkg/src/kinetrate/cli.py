"""Command-line entry point: experiment orchestration and CSV output."""
from __future__ import annotations

import argparse
import json
import os
import platform
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy

from . import __version__
from .chv import c2_bound_constant, chv_identity_residual, jacobian_values
from .config import SUBCOMMANDS, ConfigError, ExperimentConfig, parse_config
from .evolution import (Particles, RenewalMarcher, decay_curve, fit_decay_exponent,
                        geometric_times, marcher_histogram, mc_evolve, mc_histogram,
                        sample_mixture)
from .geometry import DomainError, make_domain
from .phase_grid import BoundaryGrid, PhaseDensity, PhaseGrid, VelocityMeasure
from .resolvent import Resolvent
from .transfer import BoundaryOperator, NumericalError, TransferOperator, high_frequency_decay
from .wall_kernels import make_kernel


class UsageError(ValueError):
    pass


# ---------------------------------------------------------------------------
# output
def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def write_csv(path, header, rows):
    """Write a CSV atomically (temporary file in the same directory, then rename)."""
    path = os.path.abspath(path)
    d = os.path.dirname(path)
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".csv")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(",".join(header) + "\n")
            for row in rows:
                fh.write(",".join(_fmt(x) for x in row) + "\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def read_csv(path):
    """Read a CSV written by :func:`write_csv` (header, list of string rows)."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    return lines[0].split(","), [ln.split(",") for ln in lines[1:]]


def append_manifest(out_path, record):
    log = os.path.join(os.path.dirname(os.path.abspath(out_path)), "run.log")
    with open(log, "a") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")
    return log


def versions():
    return {"kinetrate": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def resolve_threads(flag=None, config_value=1):
    if flag is not None:
        n = int(flag)
    elif os.environ.get("KINETRATE_THREADS"):
        try:
            n = int(os.environ["KINETRATE_THREADS"])
        except ValueError:
            raise UsageError("KINETRATE_THREADS must be an integer") from None
    else:
        n = int(config_value)
    if n < 1:
        raise UsageError("thread count must be >= 1")
    return n


def parallel_map(fn, items, threads=1):
    """Ordered map; results do not depend on the thread count."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


# ---------------------------------------------------------------------------
# setup
@dataclass
class Setup:
    domain: object
    vm: VelocityMeasure
    bgrid: BoundaryGrid
    kernel: object
    op: TransferOperator
    pgrid: PhaseGrid
    res: Resolvent


def _kernel_args(kcfg):
    fam = kcfg["family"]
    return ("power" if fam == "power-law" else fam), kcfg["theta"], kcfg["exponent_a"]


def build_domain(cfg):
    dc = cfg["domain"]
    return make_domain(dc["shape"], tuple(dc["semi_axes"]) if dc["semi_axes"] else None)


def build(cfg: ExperimentConfig, c=None, family=None, exponent_a=None, n_speeds=None,
          n_angles=None, n_nodes=None, speed_rule=None) -> Setup:
    dom = build_domain(cfg)
    if dom.d != 2:
        raise UsageError("transport experiments need a planar domain (disk or ellipse)")
    g = cfg["grid"]
    ref = g["refine"]
    vm = VelocityMeasure(cfg["measure"]["c"] if c is None else c, cfg["measure"]["weight"], 2,
                         (n_speeds or g["n_speeds"]) * ref, (n_angles or g["n_angles"]) * ref,
                         speed_rule or g["speed_rule"])
    bg = BoundaryGrid(dom, vm, (n_nodes or g["n_nodes"]) * ref)
    fam, theta, a = _kernel_args(cfg["kernel"])
    kern = make_kernel(dom, vm, family or fam, theta, a if exponent_a is None else exponent_a)
    op = TransferOperator(bg, kern)
    pg = PhaseGrid(bg, g["ds"])
    return Setup(dom, vm, bg, kern, op, pg, Resolvent(pg, op))


def f0_parts(setup: Setup, preset):
    """Preset initial data as ``(sign, mass, g(x), g_max)`` spatial parts.

    The velocity profile of every part is the wall re-emission profile, so
    ``psi`` is the invariant density for x-independent walls.
    """
    dom = setup.domain
    a = dom.axes
    area = dom.volume
    if preset == "psi":
        return [(1.0, 1.0, lambda x: np.ones(len(x)), 1.0)]
    if preset == "halfspace":
        return [(1.0, 0.5, lambda x: (x[:, 0] > 0).astype(float), 1.0),
                (-1.0, 0.5, lambda x: (x[:, 0] <= 0).astype(float), 1.0)]
    if preset == "bump":
        c0 = np.array([0.3 * a[0], 0.1 * a[1]])
        rad = 0.5 * min(a)

        def g(x):
            q = np.sum(((x - c0) / rad) ** 2, axis=-1)
            return np.clip(1 - q, 0, None) ** 2

        # mass of the bump relative to a uniform unit-mass density
        m = np.pi * rad**2 / 3 / area
        return [(1.0, m, g, 1.0), (-1.0, m, lambda x: np.ones(len(x)), 1.0)]
    raise UsageError(f"unknown f0 preset {preset!r}")


def f0_density(setup: Setup, preset) -> PhaseDensity:
    """Grid version of the preset (exactly zero mass for the signed presets)."""
    pg, bg = setup.pgrid, setup.bgrid
    prof = setup.kernel.profile(0.0, bg.speed)
    total = None
    vals = np.zeros(pg.total_bins)
    for sign, mass, g, _ in f0_parts(setup, preset):
        part = pg.flat_eval(lambda x, v: g(x)) * prof[pg.flat_chord]
        pm = np.sum(part * pg.flat_vol)
        vals += sign * mass * part / pm
        total = mass if total is None else total
    return PhaseDensity(pg, pg.to_padded(vals))


# ---------------------------------------------------------------------------
# subcommands
def cmd_invariant(cfg, out, threads):
    s = build(cfg)
    psi = s.res.invariant_density()
    pg, bg = s.pgrid, s.bgrid
    x, v = pg.centers()
    m = pg.mask
    vals = psi.values[m]
    rows = zip(range(pg.total_bins), x[m][:, 0], x[m][:, 1], v[m][:, 0], v[m][:, 1], vals)
    write_csv(out, ["cell", "x1", "x2", "v1", "v2", "value"], rows)
    return {"norm": psi.norm(0), "min": float(vals.min())}


def cmd_spectrum(cfg, out, threads):
    s = build(cfg)
    ex = cfg["experiment"]
    etas = sorted({0.0, *map(float, ex["etas"]), *map(float, ex["hf_etas"])})
    bo = BoundaryOperator(s.bgrid, s.kernel)

    def row(eta):
        ev = s.op.eigvals(1j * eta)
        nu = ev[np.argmax(np.abs(ev))]
        r = float(np.abs(nu))
        bnorm = bo.l1_norm(1j * eta) if eta in ex["hf_etas"] else float("nan")
        return (eta, r, 1.0 - r, s.op.square_norm(1j * eta), bnorm, nu.real, nu.imag)

    rows = parallel_map(row, etas, threads)
    write_csv(out, ["eta", "r_sigma", "margin", "norm_M2", "norm_M2_bound", "nu_re",
                    "nu_im"], rows)
    return {"radius0": rows[0][1]}


def cmd_nu_curve(cfg, out, threads):
    s = build(cfg)
    rep = s.op.leading_eigenpair(0.0)
    nup = s.op.nu_prime_zero(rep.phi)

    def row(eps):
        nu = s.op.leading_eigenpair(float(eps)).nu
        return (eps, nu.real, nu.imag, (nu.real - 1) / eps, nup)

    rows = parallel_map(row, cfg["experiment"]["eps"], threads)
    write_csv(out, ["eps", "nu_re", "nu_im", "nu_prime_fd", "nu_prime_formula"], rows)
    return {"nu_prime": nup}


def cmd_relax(cfg, out, threads):
    s = build(cfg)
    ex = cfg["experiment"]
    D = s.domain.diameter
    T = float(ex["T"])
    times = np.concatenate([[0.0], geometric_times(min(0.05 * D, T), T, 1.25)])
    times = times[: ex["n_times"] + 1] if len(times) > ex["n_times"] + 1 else times
    psi = s.res.invariant_density()
    f0 = f0_density(s, ex["f0"])
    rho = f0.mass() / psi.mass()
    target = psi * rho
    if ex["method"] == "renewal":
        m = RenewalMarcher(s.pgrid, s.op, f0)
        cur = decay_curve(m, times, target)
        rows = list(zip(cur.times, cur.distance, cur.mass))
    else:
        rows = _relax_mc(s, ex, times, target, cfg["seed"], threads)
    write_csv(out, ["t", "distance", "mass"], rows)
    return {"d0": rows[0][1], "dT": rows[-1][1]}


def _relax_mc(s, ex, times, target, seed, threads):
    n = int(ex["particles"])
    parts = f0_parts(s, ex["f0"])
    ref = marcher_histogram(s.pgrid, np.real(target.values[s.pgrid.mask]) * s.pgrid.flat_vol)
    chunk = max(1, -(-n // max(threads, 1)))
    starts = list(range(0, n, chunk))
    p0 = sample_mixture(s.domain, s.kernel, n, parts, seed)

    def run(a, t):
        sl = slice(a, min(a + chunk, n))
        sub = Particles(p0.x[sl], p0.v[sl], p0.pid[sl], p0.events[sl], p0.weight[sl])
        return mc_evolve(sub, s.kernel, t, seed) if t > 0 else sub

    rows = []
    for t in times:
        subs = parallel_map(lambda a: run(a, t), starts, threads)
        # reassemble in particle order so reductions do not depend on the chunking
        p = Particles(*(np.concatenate([getattr(q, f) for q in subs])
                        for f in ("x", "v", "pid", "events", "weight")))
        h = mc_histogram(p, s.domain)[0]
        rows.append((float(t), float(np.sum(np.abs(h - ref))), p.total_weight()))
    return rows


def rate_setup(cfg, c=None):
    a = float(cfg["experiment"]["rate_kernel"].split(":", 1)[1])
    return build(cfg, c=cfg["experiment"]["rate_c"] if c is None else c, family="power",
                 exponent_a=a, n_speeds=16, n_angles=8, n_nodes=24, speed_rule="log")


def rate_initial(s: Setup, k, eps=0.5):
    """Flat zero-mean data ``g(x) |v|^(k+1+eps) e^(-|v|^2/2) - rho Psi``.

    ``g`` vanishes near the wall so the data satisfy the boundary condition
    and lie in the domain of the generator; the speed factor puts them in
    ``X_(k+1)``.  ``Psi`` is uniform in x with the wall speed profile.
    """
    pg, bg = s.pgrid, s.bgrid
    a = s.domain.axes
    fv = pg.flat_eval(lambda x, v: np.clip(1 - np.sum((x / (0.8 * a)) ** 2, -1), 0, None) ** 2
                      * np.linalg.norm(v, axis=-1) ** (k + 1 + eps)
                      * np.exp(-np.sum(v**2, -1) / 2))
    psi = s.kernel.profile(0.0, bg.speed)[pg.flat_chord]
    psi = psi / np.sum(psi * pg.flat_vol)
    return fv - psi * np.sum(fv * pg.flat_vol)


def run_rates(cfg, ks, threads=1, c=None):
    s = rate_setup(cfg, c)
    D = s.domain.diameter
    lo, hi = cfg["experiment"]["window"]
    ts = geometric_times(lo * D, hi * D, 1.25)

    def one(k):
        m = RenewalMarcher(s.pgrid, s.op, rate_initial(s, k))
        d0 = m.distance()
        cur = decay_curve(m, ts)
        # round-off floor of the marcher relative to the initial distance
        floor = 1e-12 * d0
        fit = fit_decay_exponent(cur.times, cur.distance, (lo * D, hi * D), floor)
        return k, fit, cur

    return parallel_map(one, ks, threads)


def cmd_rates(cfg, out, threads):
    res = run_rates(cfg, cfg["experiment"]["k"], threads)
    lo, hi = cfg["experiment"]["window"]
    rows = [(k, f.alpha, f.stderr, f"{lo}D-{hi}D") for k, f, _ in res]
    write_csv(out, ["k", "alpha", "sigma", "window"], rows)
    return {"alpha": [r[1] for r in rows]}


def cmd_verify_chv(cfg, out, threads):
    dom = build_domain(cfg)
    n = cfg["experiment"]["points"]
    if dom.d == 2:
        s = 2 * np.pi * (np.arange(n) + 0.37) / n
    else:
        k = np.arange(n) + 0.5
        s = np.stack([np.arccos(1 - 2 * k / n), np.pi * (1 + 5**0.5) * k], axis=1)
    xs = dom.chart(s)
    tol = 1e-8 if np.allclose(dom.axes, dom.axes[0]) else 1e-6
    tests = {
        "identity_one": lambda sig, nx: np.ones(len(sig)),
        "identity_cos2": lambda sig, nx: (sig @ nx) ** 2,
    }

    def rows_at(i):
        x = xs[i]
        nx = dom.outward_normal(x)
        rows = []
        for name, g in tests.items():
            lhs, rhs, res = chv_identity_residual(dom, x, lambda sig: g(sig, nx))
            rows.append((f"{name}:{i}", lhs, rhs, res, tol - res))
        return rows

    rows = [r for rs in parallel_map(rows_at, range(n), threads) for r in rs]
    # Jacobian bounds on random boundary pairs
    rng = np.random.default_rng(cfg["seed"])
    m = 10000
    if dom.d == 2:
        p, q = dom.chart(rng.uniform(0, 2 * np.pi, m)), dom.chart(rng.uniform(0, 2 * np.pi, m))
    else:
        u, w = rng.normal(size=(2, m, 3))
        p = dom.snap(u / np.linalg.norm(u, axis=1, keepdims=True) * dom.axes)
        q = dom.snap(w / np.linalg.norm(w, axis=1, keepdims=True) * dom.axes)
    keep = np.linalg.norm(p - q, axis=1) > 1e-9
    p, q = p[keep], q[keep]
    J = jacobian_values(dom, p, q)[0]
    Jt = jacobian_values(dom, q, p)[0]
    r = np.linalg.norm(p - q, axis=1)
    C = c2_bound_constant(dom)
    sym = float(np.max(np.abs(J - Jt)))
    rows.append(("symmetry", float(np.max(J)), float(np.max(Jt)), sym, 1e-12 - sym))
    b1 = float(np.max(J * r ** (dom.d - 1)))
    rows.append(("bound_distance", b1, 1.0, max(b1 - 1.0, 0.0), 1.0 - b1))
    b2 = float(np.max(J * r ** (dom.d - 3)))
    rows.append(("bound_c2", b2, C**2, max(b2 - C**2, 0.0), C**2 - b2))
    write_csv(out, ["test", "lhs", "rhs", "residual", "bound_slack"], rows)
    return {"max_residual": max(r[3] for r in rows), "min_slack": min(r[4] for r in rows)}


def cmd_boundary_function(cfg, out, threads):
    s = build(cfg)
    ex = cfg["experiment"]
    f = f0_density(s, ex["f0"])

    def row(eta):
        r = s.res.boundary_function(f, float(eta), eps=tuple(ex["ladder"]))
        inc = r.increments
        return (eta, r.value.norm(0), r.value.mass().real, r.method,
                inc[-1], min(r.shrink_factors()), (r.ladder[-1] - r.value).norm(0))

    rows = parallel_map(row, ex["eta"], threads)
    write_csv(out, ["eta", "norm", "mass", "method", "last_increment", "min_shrink",
                    "distance_to_ladder"], rows)
    return {"rows": len(rows)}


COMMANDS = {
    "invariant": (cmd_invariant, "psi.csv"),
    "spectrum": (cmd_spectrum, "spectrum.csv"),
    "nu-curve": (cmd_nu_curve, "nu.csv"),
    "relax": (cmd_relax, "decay.csv"),
    "rates": (cmd_rates, "rates.csv"),
    "verify-chv": (cmd_verify_chv, "chv.csv"),
    "boundary-function": (cmd_boundary_function, "rf.csv"),
}


def _csv_floats(text):
    return [float(t) for t in text.split(",") if t.strip()]


def make_parser():
    p = argparse.ArgumentParser(prog="kinetrate", description=__doc__)
    sub = p.add_subparsers(dest="command", metavar="command")
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON configuration file")
        sp.add_argument("--out", help="output CSV path")
        sp.add_argument("--seed", type=int, help="64-bit seed")
        sp.add_argument("--threads", type=int, help="worker threads")
        sp.add_argument("--domain", choices=("disk", "ellipse", "ball"))
        if name == "spectrum":
            sp.add_argument("--eta", help="comma-separated list")
        if name == "nu-curve":
            sp.add_argument("--eps", help="comma-separated list")
        if name == "relax":
            sp.add_argument("--f0", choices=("bump", "halfspace", "psi"))
            sp.add_argument("--T", type=float)
            sp.add_argument("--method", choices=("renewal", "mc"))
            sp.add_argument("--particles", type=int)
        if name == "rates":
            sp.add_argument("--kernel", help="power:<a>")
            sp.add_argument("--k", help="comma-separated list")
        if name == "boundary-function":
            sp.add_argument("--eta", help="comma-separated list")
            sp.add_argument("--f", choices=("bump", "halfspace", "psi"))
    return p


def _overrides(args):
    ov, ex = {}, {}
    if args.domain is not None:
        ov["domain"] = {"shape": args.domain}
    if args.seed is not None:
        ov["seed"] = args.seed
    for key in ("f0", "T", "method", "particles"):
        if getattr(args, key, None) is not None:
            ex[key] = getattr(args, key)
    if getattr(args, "kernel", None) is not None:
        ex["rate_kernel"] = args.kernel
    if getattr(args, "k", None) is not None:
        ex["k"] = [int(t) for t in args.k.split(",")]
    if getattr(args, "eta", None) is not None:
        ex["etas" if args.command == "spectrum" else "eta"] = _csv_floats(args.eta)
    if getattr(args, "eps", None) is not None:
        ex["eps"] = _csv_floats(args.eps)
    if getattr(args, "f", None) is not None:
        ex["f0"] = args.f
    if ex:
        ov["experiment"] = ex
    return ov


def _error(kind, exc, code):
    rec = {"error": kind, "type": type(exc).__name__, "message": str(exc)}
    if getattr(exc, "path", None):
        rec["path"] = exc.path
    print(json.dumps(rec), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) if exc.code in (0, None) else 2
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        text = None
        if args.config:
            with open(args.config) as fh:
                text = fh.read()
        cfg = parse_config(text, _overrides(args))
        threads = resolve_threads(args.threads, cfg["threads"])
        fn, default_out = COMMANDS[args.command]
        out = args.out or cfg["output"] or default_out
    except (ConfigError, UsageError, OSError) as exc:
        return _error("usage", exc, 2)
    t0 = time.time()
    try:
        summary = fn(cfg, out, threads)
    except (UsageError, ConfigError) as exc:
        return _error("usage", exc, 2)
    except (NumericalError, DomainError, ArithmeticError, np.linalg.LinAlgError) as exc:
        return _error("numerical", exc, 1)
    rec = {"command": args.command, "config_hash": cfg.digest(), "versions": versions(),
           "wall_time": round(time.time() - t0, 3), "output": os.path.abspath(out),
           "threads": threads, "summary": summary}
    append_manifest(out, rec)
    print(json.dumps({"effective_config": cfg.data, "output": os.path.abspath(out)},
                     sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
