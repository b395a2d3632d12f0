"""Synthetic high-fidelity truth derived from low-fidelity solutions.

The map mimics a net that catches more drag than the simplified model
assumes (for instance through fouling): every displacement component and
every tension deviation from pretension is inflated by a constant factor, a
term growing with its own magnitude, and a smooth bias in the current
heading.
Seeded noise proportional to the magnitude is added on top. A zero
low-fidelity response therefore maps to a zero high-fidelity response.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .equilibrium import CageDeformation, MooringLoads
from .seastate import SeaState


@dataclass(frozen=True)
class DiscrepancyParams:
    inflation: float = 0.25
    quadratic: float = 0.1
    direction: float = 0.08
    direction_ref: float = 30.0  # deg
    noise: float = 0.01
    displacement_scale: float = 3.0  # m
    tension_scale: float = 50.0  # kN

    @classmethod
    def from_params(cls, params):
        return cls(**params["discrepancy"])

    @classmethod
    def zero(cls):
        return cls(0.0, 0.0, 0.0, 0.0, 0.0)

    def to_dict(self):
        return asdict(self)


def _distort(values, magnitude, scale, heading_term, disc: DiscrepancyParams, noise):
    factor = 1.0 + disc.inflation + disc.quadratic * magnitude / scale + heading_term
    return values * factor + disc.noise * magnitude * noise


def synth_high_fidelity(lf, sea: SeaState, disc: DiscrepancyParams | None = None, seed=0,
                        pretension=150.0):
    """Apply the discrepancy map to one low-fidelity solution.

    ``lf`` is a ``(CageDeformation, MooringLoads)`` pair; the return value is
    a pair of the same types.
    """
    deformation, loads = lf
    disc = disc or DiscrepancyParams()
    rng = np.random.default_rng(seed)
    heading = disc.direction * math.cos(math.radians(sea.current_dir - disc.direction_ref))

    D = np.asarray(deformation.displacements, dtype=float)
    D_hf = _distort(D, np.abs(D), disc.displacement_scale, heading, disc, rng.standard_normal(D.shape))

    dT = np.asarray(loads.tensions, dtype=float) - pretension
    T_hf = pretension + _distort(dT, np.abs(dT), disc.tension_scale, heading, disc,
                                 rng.standard_normal(dT.shape))
    return CageDeformation(D_hf, sea), MooringLoads(np.maximum(T_hf, 0.0))


def relative_discrepancy(hf, lf):
    """sum |hf - lf| / sum |lf| over all entries."""
    hf = np.asarray(hf, dtype=float)
    lf = np.asarray(lf, dtype=float)
    return float(np.sum(np.abs(hf - lf)) / np.sum(np.abs(lf)))
