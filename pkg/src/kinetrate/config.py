"""Strict JSON experiment configuration with defaults and range checks."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass

SUBCOMMANDS = ("invariant", "spectrum", "nu-curve", "relax", "rates", "verify-chv",
               "boundary-function")

F0_PRESETS = ("bump", "halfspace", "psi")

DEFAULTS = {
    "domain": {"shape": "disk", "semi_axes": None},
    "grid": {"n_nodes": 48, "n_speeds": 6, "n_angles": 16, "speed_rule": "linear",
             "refine": 1, "ds": None},
    "measure": {"c": 0.25, "weight": "lebesgue"},
    "kernel": {"family": "maxwellian", "theta": 1.0, "exponent_a": 2.0},
    "experiment": {
        "etas": [0.25, 0.5, 1.0, 2.0, 4.0],
        "hf_etas": [4.0, 16.0, 64.0],
        "eps": [0.016, 0.008, 0.004, 0.002, 0.001],
        "f0": "bump",
        "T": 100.0,
        "method": "renewal",
        "n_times": 24,
        "particles": 100000,
        "k": [0, 1, 2],
        "rate_kernel": "power:2",
        "rate_c": 0.0075,
        "window": [5.0, 50.0],
        "points": 8,
        "eta": [0.0, 1.0],
        "ladder": [0.04, 0.02, 0.01, 0.005],
    },
    "seed": 0,
    "threads": 1,
    "output": None,
}


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending key."""

    def __init__(self, path, msg):
        super().__init__(f"{path}: {msg}")
        self.path = path


@dataclass
class ExperimentConfig:
    data: dict

    def __getitem__(self, key):
        return self.data[key]

    def to_json(self) -> str:
        return json.dumps(self.data, sort_keys=True, indent=2)

    def digest(self) -> str:
        """Hash of the effective configuration without output/thread settings."""
        d = {k: v for k, v in self.data.items() if k not in ("output", "threads")}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def __eq__(self, other):
        return isinstance(other, ExperimentConfig) and self.data == other.data


def _merge(base, user, path):
    out = copy.deepcopy(base)
    for key, val in user.items():
        p = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(p, "unknown key")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(p, "expected an object")
            out[key] = _merge(base[key], val, p)
        else:
            out[key] = val
    return out


def _num(d, path, lo=None, hi=None, integer=False, lo_open=False):
    sec, key = path.split(".")[-2:] if "." in path else (None, path)
    val = d[sec][key] if sec else d[key]
    if integer:
        if not isinstance(val, int) or isinstance(val, bool):
            raise ConfigError(path, f"expected an integer, got {val!r}")
    elif not isinstance(val, (int, float)) or isinstance(val, bool):
        raise ConfigError(path, f"expected a number, got {val!r}")
    if lo is not None and (val <= lo if lo_open else val < lo):
        raise ConfigError(path, f"value {val} below {'(' if lo_open else '['}{lo}")
    if hi is not None and val > hi:
        raise ConfigError(path, f"value {val} above {hi}")


def _validate(d):
    if d["domain"]["shape"] not in ("disk", "ellipse", "ball"):
        raise ConfigError("domain.shape", f"unknown shape {d['domain']['shape']!r}")
    ax = d["domain"]["semi_axes"]
    if ax is not None:
        if not isinstance(ax, list) or not all(isinstance(a, (int, float)) and a > 0 for a in ax):
            raise ConfigError("domain.semi_axes", "expected a list of positive numbers")
    _num(d, "measure.c", 0.0, 0.9, lo_open=True)
    w = d["measure"]["weight"]
    if w != "lebesgue" and not (isinstance(w, str) and w.startswith("power:")):
        raise ConfigError("measure.weight", f"unknown weight {w!r}")
    _num(d, "grid.n_nodes", 8, integer=True)
    _num(d, "grid.n_speeds", 2, integer=True)
    _num(d, "grid.n_angles", 4, integer=True)
    if d["grid"]["n_angles"] % 2:
        raise ConfigError("grid.n_angles", "must be even")
    _num(d, "grid.refine", 1, 4, integer=True)
    if d["grid"]["speed_rule"] not in ("linear", "log"):
        raise ConfigError("grid.speed_rule", "expected 'linear' or 'log'")
    if d["grid"]["ds"] is not None:
        _num(d, "grid.ds", 0.0, lo_open=True)
    fam = d["kernel"]["family"]
    if fam not in ("maxwellian", "power", "power-law"):
        raise ConfigError("kernel.family", f"unknown family {fam!r}")
    th = d["kernel"]["theta"]
    if isinstance(th, str):
        if th not in ("bump", "step"):
            raise ConfigError("kernel.theta", f"unknown profile {th!r}")
    else:
        _num(d, "kernel.theta", 0.5)
    _num(d, "kernel.exponent_a", 0.0)
    ex = d["experiment"]
    if ex["f0"] not in F0_PRESETS:
        raise ConfigError("experiment.f0", f"unknown preset {ex['f0']!r}")
    if ex["method"] not in ("renewal", "mc"):
        raise ConfigError("experiment.method", "expected 'renewal' or 'mc'")
    _num(d, "experiment.T", 0.0, lo_open=True)
    _num(d, "experiment.n_times", 2, integer=True)
    _num(d, "experiment.particles", 1, integer=True)
    _num(d, "experiment.points", 1, integer=True)
    _num(d, "experiment.rate_c", 0.0, 0.9, lo_open=True)
    for key in ("etas", "hf_etas", "eps", "k", "eta", "ladder", "window"):
        if not isinstance(ex[key], list) or not ex[key]:
            raise ConfigError(f"experiment.{key}", "expected a non-empty list")
    if any(not isinstance(k, int) or k < 0 for k in ex["k"]):
        raise ConfigError("experiment.k", "expected non-negative integers")
    if any(e <= 0 for e in ex["eps"]) or any(e <= 0 for e in ex["ladder"]):
        raise ConfigError("experiment.eps", "values must be positive")
    rk = ex["rate_kernel"]
    if not (isinstance(rk, str) and rk.startswith("power:")):
        raise ConfigError("experiment.rate_kernel", "expected 'power:<a>'")
    _num(d, "seed", 0, 2**64 - 1, integer=True)
    _num(d, "threads", 1, integer=True)


def parse_config(text: str | None = None, overrides: dict | None = None) -> ExperimentConfig:
    """Parse JSON text (may be empty), merge onto defaults and validate."""
    user = {}
    if text is not None and text.strip():
        try:
            user = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError("<root>", f"malformed JSON: {exc}") from None
        if not isinstance(user, dict):
            raise ConfigError("<root>", "expected a JSON object")
    data = _merge(DEFAULTS, user, "")
    if overrides:
        data = _merge(data, overrides, "")
    _validate(data)
    return ExperimentConfig(data)
