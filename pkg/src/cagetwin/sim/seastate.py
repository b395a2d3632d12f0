"""Sea states and the stratified sampler used to build training sets."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import qmc

from ..errors import InvalidRange

# generation ranges of the low-fidelity dataset
GENERATION_RANGES = {
    "current_speed": (0.0, 1.0),
    "current_dir": (0.0, 360.0),
    "sig_wave_height": (0.0, 3.0),
    "peak_period": (0.0, 8.66),
    "wave_dir": (0.0, 360.0),
}
FIELDS = tuple(GENERATION_RANGES)
UNITS = {"current_speed": "m/s", "current_dir": "deg", "sig_wave_height": "m",
         "peak_period": "s", "wave_dir": "deg"}


def wrap_degrees(angle):
    """Map an angle to [0, 360); 360 itself becomes 0."""
    out = math.fmod(float(angle), 360.0)
    if out < 0:
        out += 360.0
    return 0.0 if out >= 360.0 else out


@dataclass(frozen=True)
class SeaState:
    """Current speed (m/s) and heading (deg, the direction the water flows
    toward, counter-clockwise from +x) plus optional wave parameters."""

    current_speed: float
    current_dir: float = 0.0
    sig_wave_height: float = 0.0
    peak_period: float = 0.0
    wave_dir: float = 0.0

    def __post_init__(self):
        for name in FIELDS:
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise InvalidRange(f"{name} must be finite, got {value}")
            object.__setattr__(self, name, value)
        for name in ("current_speed", "sig_wave_height", "peak_period"):
            if getattr(self, name) < 0:
                raise InvalidRange(f"{name} must be nonnegative, got {getattr(self, name)}")
        object.__setattr__(self, "current_dir", wrap_degrees(self.current_dir))
        object.__setattr__(self, "wave_dir", wrap_degrees(self.wave_dir))

    def as_array(self):
        return np.array([getattr(self, f) for f in FIELDS])

    @classmethod
    def from_array(cls, row):
        return cls(*(float(v) for v in row))

    def out_of_domain(self, ranges=GENERATION_RANGES):
        """Names of fields outside the generation ranges."""
        return [f for f in ("current_speed", "sig_wave_height", "peak_period")
                if not ranges[f][0] <= getattr(self, f) <= ranges[f][1]]

    def check_domain(self, ranges=GENERATION_RANGES):
        bad = self.out_of_domain(ranges)
        if bad:
            warnings.warn(f"sea state outside the training domain: {', '.join(bad)}", stacklevel=2)
        return not bad

    def current_features(self):
        """Deployed model inputs: speed, sin(dir), cos(dir)."""
        rad = math.radians(self.current_dir)
        return np.array([self.current_speed, math.sin(rad), math.cos(rad)])


def current_features(states):
    return np.array([s.current_features() for s in states]).reshape(-1, 3)


DEFAULT_INPUTS = ("current_speed", "current_dir")
DIRECTION_FIELDS = ("current_dir", "wave_dir")


def check_inputs(inputs):
    """Validate a selection of sea-state fields used as model inputs."""
    inputs = tuple(inputs)
    unknown = [f for f in inputs if f not in FIELDS]
    if not inputs or unknown or len(set(inputs)) != len(inputs):
        raise InvalidRange(f"inputs must be distinct names from {FIELDS}, got {inputs}")
    return inputs


def encode_inputs(states, inputs=DEFAULT_INPUTS):
    """Model input matrix for ``states`` over the selected fields.

    Direction fields become a (sin, cos) column pair, so the default
    selection gives the same three columns as :func:`current_features`.
    """
    inputs = check_inputs(inputs)
    rows = []
    for s in states:
        row = []
        for name in inputs:
            value = getattr(s, name)
            if name in DIRECTION_FIELDS:
                rad = math.radians(value)
                row += [math.sin(rad), math.cos(rad)]
            else:
                row.append(value)
        rows.append(row)
    width = sum(2 if f in DIRECTION_FIELDS else 1 for f in inputs)
    return np.array(rows, dtype=float).reshape(-1, width)


def sample_sea_states(n, ranges=None, seed=0):
    """Latin-hypercube samples over the five sea-state dimensions.

    Every dimension is split into ``n`` equal strata with one sample per
    stratum, so the marginal coverage is uniform for any ``n``.
    """
    if n < 1:
        raise InvalidRange(f"n must be at least 1, got {n}")
    ranges = {**GENERATION_RANGES, **(ranges or {})}
    lo = np.empty(len(FIELDS))
    hi = np.empty(len(FIELDS))
    for j, name in enumerate(FIELDS):
        a, b = (float(v) for v in ranges[name])
        if not (math.isfinite(a) and math.isfinite(b)) or b < a:
            raise InvalidRange(f"invalid range for {name}: ({a}, {b})")
        if name in ("current_speed", "sig_wave_height", "peak_period") and a < 0:
            raise InvalidRange(f"{name} range must be nonnegative")
        lo[j], hi[j] = a, b
    unit = qmc.LatinHypercube(d=len(FIELDS), seed=np.random.default_rng(seed)).random(n)
    values = lo + unit * (hi - lo)
    return [SeaState(*row) for row in values]
