"""Training the twin and serving predictions from it.

Training runs in two stages. The low-fidelity stage fits PCA on the
simulated deformations, one GP per mooring-line tension and one GP per
retained PCA coefficient, all over the current features (speed, sin and cos
of the heading). The high-fidelity stage fits one two-level NARGP per
sensor on a sparse sample of sensor records, using the matching
low-fidelity model as its lower level.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import threading
import time
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone

import numpy as np

from .. import pca
from ..errors import (
    CageTwinError,
    InsufficientHfData,
    ModelMissing,
    PredictionError,
    StageFailure,
)
from ..gcn import GcnConfig, fit_gcn, node_features
from ..gp import FidelityDataset, FitConfig, fit_gp
from ..nargp import NargpConfig, fit_nargp
from ..sim.params import default_params
from ..sim.seastate import DEFAULT_INPUTS, SeaState, check_inputs, encode_inputs
from ..sim.sensors import DEPTH_NAMES, SHACKLE_NAMES, SensorConfig
from ..sim.topology import cage
from .bundle import FORMAT_VERSION, PcaNodeSurrogate, TwinBundle
from .ingest import format_timestamp

log = logging.getLogger(__name__)

QUANTITY_NAMES = SHACKLE_NAMES + DEPTH_NAMES
MODES = ("gp-pca", "gcn")


@dataclass(frozen=True)
class TwinConfig:
    threshold: float = 0.93
    mode: str = "gp-pca"
    seed: int = 0
    lf_restarts: int = 3
    hf_restarts: int = 10
    hf_depth_fraction: float = 0.02
    hf_shackle_fraction: float = 0.015
    min_hf_records: int = 4
    rest_anchors: int = 4  # zero-current calibration records per sensor, at evenly spaced headings
    inputs: tuple = DEFAULT_INPUTS  # sea-state fields fed to the GPs; directions are sin/cos encoded
    gcn: GcnConfig = field(default_factory=GcnConfig)
    gcn_scenarios: int | None = None  # train the GCN on a seeded subset of this size

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        object.__setattr__(self, "inputs", check_inputs(self.inputs))

    def to_dict(self):
        d = asdict(self)
        d["gcn"] = asdict(self.gcn)
        d["gcn"]["hidden"] = list(self.gcn.hidden)
        d["inputs"] = list(self.inputs)
        return d

    def hash(self):
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def _stage(name, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except (InsufficientHfData, StageFailure):
        raise
    except (CageTwinError, ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
        raise StageFailure(name, exc) from exc


def hf_sample(speeds, fraction, min_records, rng):
    """Sorted indices of a seeded sparse sample of HF records.

    Records are ranked by current speed and split into as many equal bins
    as records wanted; one record is drawn from each bin, so the sample
    always spans the speed range.
    """
    speeds = np.asarray(speeds, dtype=float)
    n_available = speeds.size
    count = min(max(min_records, math.ceil(fraction * n_available)), n_available)
    if count == 0:
        return np.empty(0, dtype=int)
    bins = np.array_split(np.argsort(speeds, kind="stable"), count)
    return np.sort([int(rng.choice(b)) for b in bins])


def rest_anchor_features(count, inputs=DEFAULT_INPUTS):
    """Inputs of ``count`` calm-water states (no current, no waves) at evenly spaced headings."""
    return encode_inputs([SeaState(0.0, 360.0 * i / count, 0.0, 0.0, 360.0 * i / count) for i in range(count)],
                         inputs)


def bundle_inputs(bundle):
    """Input field selection a bundle was trained with."""
    return tuple(bundle.config.get("inputs", DEFAULT_INPUTS))


def _fit_lf(X, targets, config):
    cfg = FitConfig(n_restarts=config.lf_restarts, seed=config.seed)
    return tuple(fit_gp((X, targets[:, j]), cfg) for j in range(targets.shape[1]))


def _fit_level2(X, y, lower, ref, config, level_seed):
    ds = FidelityDataset(2, X, y, output_name=ref)
    cfg = NargpConfig(FitConfig(n_restarts=config.hf_restarts, seed=level_seed), mode="surrogate")
    return fit_nargp([ds], cfg, lower=lower, lower_ref=ref)


def train_bundle(lf, hf, config: TwinConfig | None = None, sensors: SensorConfig | None = None,
                 topo=None, params=None) -> TwinBundle:
    """Run both training stages and seal the result.

    ``lf`` is an :class:`~cagetwin.sim.dataset.LfDataset`; ``hf`` an
    :class:`~cagetwin.sim.dataset.HfDataset` whose records are the pool from
    which the sparse per-sensor samples are drawn.

    Each high-fidelity sample is extended with ``config.rest_anchors``
    calm-water records. At zero current the cage hangs at rest, so the
    shackles read the pretension from ``params`` and the depth sensors read
    zero; these values are exact and need no simulation.
    """
    config = config or TwinConfig()
    params = params if params is not None else default_params()
    pretension = float(params["mooring"]["pretension"])
    topo = topo or cage()
    sensors = sensors or SensorConfig.from_depths(topo)

    # stage 1: reduction and low-fidelity surrogates
    M = _stage("pca", pca.assemble_data_matrix, lf.retained())
    basis = _stage("pca", lambda: pca.eigen_decompose(M).with_threshold(config.threshold))
    B = pca.mean_coefficients(pca.project(M, basis), M.scenario_index).coefficients
    X_lf = encode_inputs(lf.states(), config.inputs)
    lf_load = _stage("lf-loads", _fit_lf, X_lf, lf.mean_tensions(), config)
    lf_coeff = _stage("lf-coefficients", _fit_lf, X_lf, B.T, config)
    log.info("low-fidelity stage done: k=%d", basis.retained)

    # stage 2: sparse high-fidelity corrections
    X_hf = encode_inputs(hf.states(), config.inputs)
    Q = hf.quantities()
    picks = {
        "shackle": hf_sample(X_hf[:, 0], config.hf_shackle_fraction, config.min_hf_records,
                             np.random.default_rng([config.seed, 1])),
        "depth": hf_sample(X_hf[:, 0], config.hf_depth_fraction, config.min_hf_records,
                           np.random.default_rng([config.seed, 2])),
    }
    X_rest = rest_anchor_features(config.rest_anchors, config.inputs)
    hf_models = []
    used = {}
    for q, name in enumerate(QUANTITY_NAMES):
        idx = picks["shackle" if q < 5 else "depth"]
        idx = idx[np.isfinite(Q[idx, q])]
        if idx.size < config.min_hf_records:
            raise InsufficientHfData(f"{name}: {idx.size} usable record(s), at least {config.min_hf_records} needed")
        if q < 5:
            line = sensors.load_shackles[q]
            lower, ref = lf_load[line], f"lf_load/{line}"
        else:
            node = sensors.depth_nodes[q - 5]
            lower = PcaNodeSurrogate(lf_coeff, basis.phi[3 * node + 2], node)
            ref = lower.ref
        X2 = np.vstack([X_hf[idx], X_rest])
        y2 = np.concatenate([Q[idx, q], np.full(len(X_rest), pretension if q < 5 else 0.0)])
        model = _stage(f"nargp:{name}", _fit_level2, X2, y2, lower, ref, config, config.seed + q)
        hf_models.append(model)
        used[name] = [int(v) for v in hf.scenario_id[idx]]

    gcn_model = None
    if config.mode == "gcn":
        s = len(lf)
        if config.gcn_scenarios is not None and config.gcn_scenarios < s:
            sub = np.sort(np.random.default_rng([config.seed, 3]).choice(s, config.gcn_scenarios, replace=False))
        else:
            sub = np.arange(s)
        states = lf.states()
        D = lf.mean_displacements()
        pairs = [(states[i], D[i]) for i in sub]
        gcn_model = _stage("gcn", fit_gcn, pairs, topo, replace(config.gcn, seed=config.seed))

    version = {"format": FORMAT_VERSION, "params_hash": lf.params_hash, "config_hash": config.hash()}
    info = {
        "retained": basis.retained,
        "explained": [float(v) for v in basis.explained()[: basis.retained]],
        "lf_scenarios": len(lf),
        "hf_records_used": used,
        "rest_anchors": config.rest_anchors,
    }
    return TwinBundle(lf_load, lf_coeff, tuple(hf_models[:5]), tuple(hf_models[5:]), basis, topo, sensors,
                      config.mode, gcn_model, version, config.to_dict(), info)


# -- prediction ------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TwinSnapshot:
    timestamp: datetime
    sea_state: SeaState
    shackle_loads: np.ndarray  # (5,) kN
    shackle_std: np.ndarray
    depth_displacements: np.ndarray  # (3,) m, positive up
    depth_std: np.ndarray
    deformation: np.ndarray  # (N, 3) m
    provenance: dict

    @property
    def latency_ms(self):
        return self.provenance["latency_ms"]

    def quantities(self):
        return np.concatenate([self.shackle_loads, self.depth_displacements])

    def to_dict(self, include_deformation=False):
        s = self.sea_state
        out = {
            "ts": format_timestamp(self.timestamp),
            "sea_state": {"cs": s.current_speed, "cd": s.current_dir, "hs": s.sig_wave_height,
                          "tp": s.peak_period, "wd": s.wave_dir},
            "shackle_loads": [float(v) for v in self.shackle_loads],
            "shackle_std": [float(v) for v in self.shackle_std],
            "depth_displacements": [float(v) for v in self.depth_displacements],
            "depth_std": [float(v) for v in self.depth_std],
            "provenance": self.provenance,
        }
        if include_deformation:
            out["deformation"] = self.deformation.tolist()
        return out

    def to_json(self, include_deformation=False):
        return json.dumps(self.to_dict(include_deformation), sort_keys=True)


def predict_deformation(bundle: TwinBundle, sea: SeaState, mode=None):
    """(N, 3) displacement field from the PCA coefficient GPs or from the GCN."""
    mode = mode or bundle.deformation_mode
    if mode == "gcn":
        if bundle.gcn is None:
            raise ModelMissing("bundle has no GCN deformation model")
        X = node_features(bundle.topology.rest_positions, [sea])[0]
        return bundle.gcn.predict(X)
    if mode != "gp-pca":
        raise ValueError(f"unknown deformation mode {mode!r}")
    if not bundle.lf_coeff_models:
        raise ModelMissing("bundle has no PCA coefficient models")
    x = encode_inputs([sea], bundle_inputs(bundle))
    b = np.array([m.predict(x)[0][0] for m in bundle.lf_coeff_models])
    return pca.to_nodes(pca.reconstruct(b, bundle.pca_basis))


def _checked(name, values):
    values = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(values)):
        raise PredictionError(name, "non-finite prediction")
    return values


def pipeline_predict(bundle: TwinBundle, sea: SeaState, timestamp=None, mode=None) -> TwinSnapshot:
    """One twin update for the sea state ``sea``."""
    if bundle is None:
        raise ModelMissing("no bundle loaded")
    start = time.perf_counter()
    x = encode_inputs([sea], bundle_inputs(bundle))
    if len(bundle.hf_load_models) != 5 or len(bundle.hf_depth_models) != 3:
        raise ModelMissing("bundle lacks one or more sensor models")
    means = np.empty(8)
    stds = np.empty(8)
    for q, model in enumerate(bundle.hf_load_models + bundle.hf_depth_models):
        name = QUANTITY_NAMES[q]
        try:
            m, v = model.predict(x)
        except CageTwinError as exc:
            raise PredictionError(name, exc) from exc
        means[q] = _checked(name, m)[0]
        stds[q] = math.sqrt(_checked(name, v)[0])
    try:
        deformation = predict_deformation(bundle, sea, mode)
    except (ModelMissing, ValueError):
        raise
    except CageTwinError as exc:
        raise PredictionError("deformation", exc) from exc
    deformation = _checked("deformation", deformation)
    latency = (time.perf_counter() - start) * 1e3
    provenance = {
        "bundle_version": bundle.version,
        "mode": mode or bundle.deformation_mode,
        "latency_ms": latency,
    }
    ts = timestamp or datetime.now(timezone.utc)
    return TwinSnapshot(ts, sea, means[:5], stds[:5], means[5:], stds[5:], deformation, provenance)


class TwinServer:
    """Serve snapshots from a bundle that can be replaced while running.

    Readers take a reference to the current bundle once per prediction, so
    every snapshot comes from exactly one bundle; :meth:`swap` replaces the
    reference in a single assignment.
    """

    def __init__(self, bundle: TwinBundle | None = None):
        self._bundle = bundle
        self._lock = threading.Lock()
        self.latencies_ms = []

    @property
    def bundle(self):
        return self._bundle

    def swap(self, bundle: TwinBundle):
        with self._lock:
            old, self._bundle = self._bundle, bundle
        return old

    def predict(self, sea, timestamp=None, mode=None):
        bundle = self._bundle
        snap = pipeline_predict(bundle, sea, timestamp, mode)
        with self._lock:
            self.latencies_ms.append(snap.latency_ms)
        return snap

    def run(self, records, out, deformation_dir=None):
        """Write one NDJSON snapshot per ``(timestamp, sea_state)`` record.

        With ``deformation_dir`` each deformation goes to a sidecar
        ``.npy`` file named after the timestamp. Returns the count written.
        """
        count = 0
        for ts, sea in records:
            snap = self.predict(sea, ts)
            doc = snap.to_dict()
            if deformation_dir is not None:
                name = format_timestamp(ts).replace(":", "-") + ".npy"
                np.save(deformation_dir / name, snap.deformation)
                doc["deformation_file"] = name
            out.write(json.dumps(doc, sort_keys=True) + "\n")
            count += 1
        return count

    def latency_summary(self):
        lat = np.asarray(self.latencies_ms)
        if lat.size == 0:
            return {"count": 0}
        return {"count": int(lat.size), "median_ms": float(np.median(lat)),
                "p99_ms": float(np.percentile(lat, 99)), "max_ms": float(lat.max())}
