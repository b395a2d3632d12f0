"""Scenario datasets: generation and file I/O.

A low-fidelity dataset holds, per scenario, the sea state and a short
synthetic time series of all node displacements and line tensions. The
first retained step is a ramp transient; the rest oscillate slightly about
the equilibrium with a seeded phase, so that the average over the retained
window equals the equilibrium. A high-fidelity dataset holds sparse sensor
records: five shackle loads and three depth-sensor displacements.

Files are either delimited text (``.csv``, one row per time step or record)
or a compact ``.npz`` container with the same fields.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import _io
from ..errors import DimensionMismatch, EmptyDataset, NoConvergence, UnreadableSource, SchemaViolation
from ..pca import TRANSIENT_FRACTION, drop_transient
from .equilibrium import CageModel, CageDeformation, MooringLoads
from .hifi import DiscrepancyParams, synth_high_fidelity
from .params import default_params, params_hash
from .seastate import FIELDS, UNITS, SeaState, sample_sea_states
from .sensors import DEPTH_NAMES, SHACKLE_NAMES, SensorConfig, sensor_extract

log = logging.getLogger(__name__)

SEA_COLUMNS = tuple(f"{f}[{UNITS[f]}]" for f in FIELDS)


def displacement_columns(node_count):
    return [f"{axis}{i}[m]" for i in range(1, node_count + 1) for axis in "xyz"]


def tension_columns(n_lines):
    return [f"T{i}[kN]" for i in range(1, n_lines + 1)]


@dataclass(frozen=True, eq=False)
class LfDataset:
    sea_states: np.ndarray  # (s, 5)
    displacements: np.ndarray  # (s, T, N, 3)
    tensions: np.ndarray  # (s, T, n_lines)
    scenario_id: np.ndarray  # (s,)
    params_hash: str
    transient_fraction: float = TRANSIENT_FRACTION
    failures: tuple = field(default=())

    def __post_init__(self):
        s = self.sea_states.shape[0]
        if not (self.displacements.shape[0] == self.tensions.shape[0] == self.scenario_id.size == s):
            raise DimensionMismatch("dataset arrays disagree on the scenario count")

    def __len__(self):
        return self.sea_states.shape[0]

    @property
    def steps(self):
        return self.displacements.shape[1]

    @property
    def node_count(self):
        return self.displacements.shape[2]

    def states(self):
        return [SeaState.from_array(row) for row in self.sea_states]

    def retained(self):
        """Per-scenario displacement series after the transient cut."""
        return [drop_transient(series, self.transient_fraction) for series in self.displacements]

    def mean_displacements(self):
        n_drop = int(math.floor(self.transient_fraction * self.steps))
        return self.displacements[:, n_drop:].mean(axis=1)

    def mean_tensions(self):
        n_drop = int(math.floor(self.transient_fraction * self.steps))
        return self.tensions[:, n_drop:].mean(axis=1)

    def subset(self, index):
        index = np.asarray(index)
        return LfDataset(self.sea_states[index], self.displacements[index], self.tensions[index],
                         self.scenario_id[index], self.params_hash, self.transient_fraction)


@dataclass(frozen=True, eq=False)
class HfDataset:
    sea_states: np.ndarray  # (r, 5)
    shackle_loads: np.ndarray  # (r, 5)
    depth_displacements: np.ndarray  # (r, 3)
    scenario_id: np.ndarray  # (r,)
    params_hash: str

    def __len__(self):
        return self.sea_states.shape[0]

    def states(self):
        return [SeaState.from_array(row) for row in self.sea_states]

    def quantities(self):
        """(r, 8) matrix: shackles 1-5 then depth sensors 1-3."""
        return np.hstack([self.shackle_loads, self.depth_displacements])

    def subset(self, index):
        index = np.asarray(index)
        return HfDataset(self.sea_states[index], self.shackle_loads[index],
                         self.depth_displacements[index], self.scenario_id[index], self.params_hash)


def synth_time_series(eq_disp, eq_tension, pretension, steps, amplitude, rng,
                      transient_fraction=TRANSIENT_FRACTION):
    """Ramp transient followed by a small oscillation about the equilibrium."""
    n_drop = int(math.floor(transient_fraction * steps))
    n_keep = steps - n_drop
    phase = rng.uniform(0.0, 2 * math.pi)
    factor = np.empty(steps)
    factor[:n_drop] = np.linspace(0.0, 1.0, n_drop + 2)[1:-1] if n_drop else []
    # a full period over the retained window: the window mean is exactly the equilibrium
    j = np.arange(n_keep)
    osc = np.sin(phase + 2 * math.pi * j / n_keep)
    factor[n_drop:] = 1.0 + amplitude * (osc - osc.mean())
    disp = factor[:, None, None] * eq_disp[None]
    tension = pretension + factor[:, None] * (eq_tension - pretension)[None]
    return disp, tension


def generate_lf_dataset(n, seed=0, params=None, states=None, model=None, progress=None) -> LfDataset:
    """Solve ``n`` sampled sea states and synthesize their time series.

    Scenario ``h`` draws its oscillation phase from its own generator seeded
    with ``(seed, h)``, so any subset of scenarios can be regenerated alone.
    Solver failures are logged and kept in ``failures``; the scenario is
    left out of the arrays.
    """
    params = params if params is not None else default_params()
    model = model or CageModel(params=params)
    states = states if states is not None else sample_sea_states(n, seed=seed)
    if not states:
        raise EmptyDataset("no sea states to simulate")
    ts = params["time_series"]
    steps = int(ts["steps"])
    rows, disps, tens, ids, failures = [], [], [], [], []
    last = None
    for h, sea in enumerate(states, start=1):
        try:
            deformation, loads, _ = model.solve(sea)
        except NoConvergence as exc:
            log.warning("scenario %d failed: %s", h, exc)
            failures.append((h, str(exc)))
            last = exc
            continue
        rng = np.random.default_rng([seed, h])
        d, t = synth_time_series(deformation.displacements, loads.tensions, model.pretension,
                                 steps, ts["oscillation"], rng)
        rows.append(sea.as_array())
        disps.append(d)
        tens.append(t)
        ids.append(h)
        if progress is not None:
            progress(h, len(states))
    if not rows:
        raise NoConvergence(f"every one of the {len(states)} scenario(s) failed to converge",
                            last.residual, last.iterations)
    return LfDataset(np.array(rows), np.array(disps), np.array(tens), np.array(ids),
                     params_hash(params), failures=tuple(failures))


def generate_hf_dataset(lf: LfDataset, seed=0, params=None, sensors: SensorConfig | None = None,
                        disc: DiscrepancyParams | None = None, topo=None) -> HfDataset:
    """Sensor records of the synthetic truth for every scenario of ``lf``."""
    params = params if params is not None else default_params()
    disc = disc or DiscrepancyParams.from_params(params)
    if sensors is None:
        from .topology import cage

        sensors = SensorConfig.from_params(topo or cage(params["geometry"]), params)
    pretension = params["mooring"]["pretension"]
    shackles, depths = [], []
    mean_d = lf.mean_displacements()
    mean_t = lf.mean_tensions()
    for h, sea_row in enumerate(lf.sea_states):
        sea = SeaState.from_array(sea_row)
        hf = synth_high_fidelity((CageDeformation(mean_d[h], sea), MooringLoads(mean_t[h])), sea, disc,
                                 seed=[seed, int(lf.scenario_id[h])], pretension=pretension)
        reading = sensor_extract(*hf, sensors)
        shackles.append(reading.shackle_loads)
        depths.append(reading.depth_displacements)
    return HfDataset(lf.sea_states.copy(), np.array(shackles), np.array(depths), lf.scenario_id.copy(),
                     lf.params_hash)


def lf_sensor_readings(lf: LfDataset, sensors: SensorConfig):
    """Low-fidelity counterpart of the sensor records, (s, 8)."""
    r = sensor_extract(lf.mean_displacements(), lf.mean_tensions(), sensors)
    return np.hstack([r.shackle_loads, r.depth_displacements])


# -- file I/O -------------------------------------------------------------

def _meta(kind, ds, **extra):
    return json.dumps({"kind": kind, "params_hash": ds.params_hash, **extra}, sort_keys=True)


def write_lf_dataset(ds: LfDataset, path):
    path = Path(path)
    if path.suffix == ".npz":
        _io.save_npz(path, {
            "meta": np.array(_meta("lf", ds, transient_fraction=ds.transient_fraction)),
            "sea_states": ds.sea_states, "displacements": ds.displacements,
            "tensions": ds.tensions, "scenario_id": ds.scenario_id,
        })
        return path
    s, T, N, _ = ds.displacements.shape
    header = (["scenario_id", "step"] + list(SEA_COLUMNS) + displacement_columns(N)
              + tension_columns(ds.tensions.shape[2]) + ["params_hash"])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for h in range(s):
            for t in range(T):
                row = [int(ds.scenario_id[h]), t] + [repr(float(v)) for v in ds.sea_states[h]]
                row += [repr(float(v)) for v in ds.displacements[h, t].ravel()]
                row += [repr(float(v)) for v in ds.tensions[h, t]]
                w.writerow(row + [ds.params_hash])
    return path


def _open_rows(path):
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise UnreadableSource(f"cannot open {path}: {exc}") from exc
    with fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SchemaViolation(f"{path} is empty")
    return rows[0], rows[1:]


def read_lf_dataset(path) -> LfDataset:
    path = Path(path)
    if path.suffix == ".npz":
        try:
            d = _io.load_npz(path)
        except (OSError, ValueError) as exc:
            raise UnreadableSource(f"cannot read {path}: {exc}") from exc
        meta = json.loads(str(d["meta"]))
        if meta.get("kind") != "lf":
            raise SchemaViolation(f"{path} is not a low-fidelity dataset")
        return LfDataset(d["sea_states"], d["displacements"], d["tensions"], d["scenario_id"],
                         meta["params_hash"], meta["transient_fraction"])
    header, rows = _open_rows(path)
    if header[:2] != ["scenario_id", "step"] or header[-1] != "params_hash":
        raise SchemaViolation(f"{path}: unexpected header")
    n_disp = sum(1 for c in header if c[:1] in "xyz" and c.endswith("[m]") and c[1:2].isdigit())
    n_ten = sum(1 for c in header if c.startswith("T") and c.endswith("[kN]"))
    if not rows:
        raise EmptyDataset(f"{path} has no records")
    data = np.array([[float(v) for v in r[:-1]] for r in rows])
    ids = data[:, 0].astype(int)
    steps = int(data[:, 1].max()) + 1
    s = len(np.unique(ids))
    if data.shape[0] != s * steps:
        raise SchemaViolation(f"{path}: scenarios have unequal step counts")
    sea = data[::steps, 2:2 + len(FIELDS)]
    off = 2 + len(FIELDS)
    disp = data[:, off:off + n_disp].reshape(s, steps, n_disp // 3, 3)
    ten = data[:, off + n_disp:off + n_disp + n_ten].reshape(s, steps, n_ten)
    return LfDataset(sea, disp, ten, ids[::steps], rows[0][-1])


HF_COLUMNS = ["scenario_id"] + list(SEA_COLUMNS) + [f"{n}[kN]" for n in SHACKLE_NAMES] \
    + [f"{n}[m]" for n in DEPTH_NAMES] + ["params_hash"]


def write_hf_dataset(ds: HfDataset, path):
    path = Path(path)
    if path.suffix == ".npz":
        _io.save_npz(path, {
            "meta": np.array(_meta("hf", ds)), "sea_states": ds.sea_states,
            "shackle_loads": ds.shackle_loads, "depth_displacements": ds.depth_displacements,
            "scenario_id": ds.scenario_id,
        })
        return path
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HF_COLUMNS)
        for h in range(len(ds)):
            vals = np.concatenate([ds.sea_states[h], ds.shackle_loads[h], ds.depth_displacements[h]])
            w.writerow([int(ds.scenario_id[h])] + [repr(float(v)) for v in vals] + [ds.params_hash])
    return path


def read_hf_dataset(path) -> HfDataset:
    path = Path(path)
    if path.suffix == ".npz":
        try:
            d = _io.load_npz(path)
        except (OSError, ValueError) as exc:
            raise UnreadableSource(f"cannot read {path}: {exc}") from exc
        meta = json.loads(str(d["meta"]))
        if meta.get("kind") != "hf":
            raise SchemaViolation(f"{path} is not a high-fidelity dataset")
        return HfDataset(d["sea_states"], d["shackle_loads"], d["depth_displacements"], d["scenario_id"],
                         meta["params_hash"])
    header, rows = _open_rows(path)
    if header != HF_COLUMNS:
        raise SchemaViolation(f"{path}: unexpected header")
    if not rows:
        raise EmptyDataset(f"{path} has no records")
    data = np.array([[float(v) for v in r[:-1]] for r in rows])
    return HfDataset(data[:, 1:6], data[:, 6:11], data[:, 11:14], data[:, 0].astype(int), rows[0][-1])
