"""Versioned physical constants for the cage simulator.

All constants live in ``cagetwin/data/default_params.json``. Datasets record
:func:`params_hash` of the mapping they were generated with so synthetic
truth can be traced back to the exact constants.
"""

from __future__ import annotations

import copy
import hashlib
import json
from importlib import resources

from ..errors import InvalidParams

PARAMS_VERSION = 1
_REQUIRED = ("geometry", "net", "edges", "mooring", "waves", "solver", "discrepancy", "sensors", "time_series")


def default_params():
    text = resources.files("cagetwin.data").joinpath("default_params.json").read_text()
    return json.loads(text)


def load_params(path=None):
    """Read a parameter file; missing keys fall back to the defaults."""
    if path is None:
        return default_params()
    try:
        with open(path) as fh:
            user = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidParams(f"cannot read parameter file {path}: {exc}") from exc
    return validate_params(merge(default_params(), user))


def merge(base, override):
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = merge(out[key], value)
        else:
            out[key] = value
    return out


def validate_params(params):
    for key in _REQUIRED:
        if key not in params:
            raise InvalidParams(f"missing parameter group {key!r}")
    if params.get("version", PARAMS_VERSION) > PARAMS_VERSION:
        raise InvalidParams(f"parameter version {params['version']} is newer than {PARAMS_VERSION}")
    positive = [
        ("water_density",), ("net", "solidity"), ("net", "drag_coefficient"),
        ("edges", "vertical_axial"), ("edges", "ring_axial"), ("edges", "apex_axial"),
        ("mooring", "stiffness"), ("solver", "tol"), ("solver", "max_iter"),
    ]
    for path in positive:
        value = params
        for key in path:
            value = value[key]
        if not value > 0:
            raise InvalidParams(f"{'.'.join(path)} must be positive, got {value}")
    if params["mooring"]["pretension"] < 0:
        raise InvalidParams("mooring.pretension must be nonnegative")
    return params


def params_hash(params) -> str:
    """Stable sha256 over the canonical JSON form."""
    blob = json.dumps(params, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()
