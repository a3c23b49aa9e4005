"""Regression fixtures pinned to the configuration that produced them."""
from __future__ import annotations

import json
import os

import numpy as np


class FixtureMismatch(AssertionError):
    """A pinned value or its producing configuration changed."""


def _load(path):
    if not os.path.exists(path):
        return {}
    with open(path) as fh:
        return json.load(fh)


def record_fixture(path, name, config_hash, values: dict):
    """Store ``values`` under ``name`` together with the configuration hash."""
    data = _load(path)
    data[name] = {"config_hash": config_hash,
                  "values": {k: float(v) for k, v in values.items()}}
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def check_fixture(path, name, config_hash, values: dict, rtol=1e-6, atol=0.0):
    """Compare ``values`` with the pinned fixture; raise with both values on mismatch."""
    data = _load(path)
    if name not in data:
        raise FixtureMismatch(f"fixture {name!r} missing from {path}")
    pinned = data[name]
    if pinned["config_hash"] != config_hash:
        raise FixtureMismatch(f"fixture {name!r}: pinned for config {pinned['config_hash']}, "
                              f"run used {config_hash}")
    bad = []
    for key, val in values.items():
        if key not in pinned["values"]:
            bad.append(f"{key}: not pinned (got {val!r})")
            continue
        ref = pinned["values"][key]
        if not np.isclose(val, ref, rtol=rtol, atol=atol):
            bad.append(f"{key}: pinned {ref!r}, got {float(val)!r}")
    if bad:
        raise FixtureMismatch(f"fixture {name!r} mismatch: " + "; ".join(bad))
    return True
