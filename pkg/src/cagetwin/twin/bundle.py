"""The sealed twin bundle and its on-disk container.

Container layout::

    8 bytes   magic b"CAGETWIN"
    4 bytes   format version, little-endian unsigned
    8 bytes   header length H, little-endian unsigned
    32 bytes  SHA-256 of the header
    H bytes   UTF-8 JSON header: scalar metadata plus a section table
    ...       sections (``.npy`` array blobs), back to back

Every section entry carries its byte range and a SHA-256 digest. A file is read
and verified completely before any model object is built, so a load either
yields a whole bundle or raises.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import _io
from ..errors import CorruptBundle, ModelMissing, UnreadableSource, VersionUnsupported
from ..gcn import model_arrays, model_from_arrays
from ..gp import GpModel, Normalization, SEArdKernel
from ..nargp import NargpKernel, NargpModel
from ..pca import PcaBasis
from ..sim.sensors import SensorConfig
from ..sim.topology import CageTopology

MAGIC = b"CAGETWIN"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ32s")
KERNELS = {k.name: k for k in (SEArdKernel, NargpKernel)}


class PcaNodeSurrogate:
    """Low-fidelity vertical displacement of one node from the coefficient GPs.

    The mean is ``sum_j phi[r, j] m_j(x)``; coefficient GPs are treated as
    independent, so the variance is ``sum_j phi[r, j]^2 v_j(x)``.
    """

    def __init__(self, coeff_models, phi_row, node, axis=2):
        self.coeff_models = tuple(coeff_models)
        self.phi_row = np.asarray(phi_row, dtype=float)
        self.node = int(node)
        self.axis = int(axis)
        self.input_dim = self.coeff_models[0].input_dim

    @property
    def ref(self):
        return f"pca_node/{self.node}/{'xyz'[self.axis]}"

    def predict(self, X, include_noise=True):
        pairs = [m.predict(X, include_noise=include_noise) for m in self.coeff_models]
        means = np.stack([p[0] for p in pairs], axis=1)
        variances = np.stack([p[1] for p in pairs], axis=1)
        return means @ self.phi_row, variances @ (self.phi_row**2)


@dataclass(frozen=True, eq=False)
class TwinBundle:
    lf_load_models: tuple  # one GpModel per mooring line
    lf_coeff_models: tuple  # one GpModel per retained PCA coefficient
    hf_load_models: tuple  # one NargpModel per load shackle
    hf_depth_models: tuple  # one NargpModel per depth sensor
    pca_basis: PcaBasis
    topology: CageTopology
    sensors: SensorConfig
    deformation_mode: str = "gp-pca"
    gcn: object = None
    version: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        for model in self.hf_load_models + self.hf_depth_models:
            lower = model.levels[0]
            if isinstance(lower, PcaNodeSurrogate):
                if any(a is not b for a, b in zip(lower.coeff_models, self.lf_coeff_models)):
                    raise ModelMissing(f"{model.lower_ref}: coefficient models are not part of the bundle")
            elif not any(lower is m for m in self.lf_load_models):
                raise ModelMissing(f"{model.lower_ref}: lower level is not part of the bundle")
        if self.deformation_mode not in ("gp-pca", "gcn"):
            raise ValueError(f"unknown deformation mode {self.deformation_mode!r}")

    @property
    def retained(self):
        return self.pca_basis.retained


# -- GP model <-> (metadata, arrays) -------------------------------------------

def _gp_parts(model: GpModel, prefix, sections):
    nz = model.normalization
    arrays = {
        "theta": model.theta, "training_inputs": model.training_inputs,
        "training_outputs": model.training_outputs, "chol_factor": model.chol_factor,
        "alpha": model.alpha, "x_mean": nz.x_mean, "x_scale": nz.x_scale,
    }
    for name, arr in arrays.items():
        sections[f"{prefix}/{name}"] = arr
    return {
        "kernel": model.kernel.name,
        "dim": model.kernel.dim,
        "noise_var": model.noise_var,
        "y_mean": nz.y_mean,
        "y_scale": nz.y_scale,
        "jitter": model.jitter,
        "degenerate": model.degenerate,
        "fit_info": model.fit_info,
    }


def _gp_from(meta, prefix, sections):
    kernel = KERNELS[meta["kernel"]](meta["dim"])
    a = {k.rsplit("/", 1)[1]: v for k, v in sections.items() if k.rsplit("/", 1)[0] == prefix}
    return GpModel(
        kernel=kernel, theta=a["theta"], noise_var=meta["noise_var"],
        training_inputs=a["training_inputs"], training_outputs=a["training_outputs"],
        chol_factor=a["chol_factor"], alpha=a["alpha"],
        normalization=Normalization(a["x_mean"], a["x_scale"], meta["y_mean"], meta["y_scale"]),
        jitter=meta["jitter"], degenerate=meta["degenerate"], fit_info=meta["fit_info"],
    )


def _level2_parts(model: NargpModel, prefix, sections):
    meta = _gp_parts(model.levels[1], prefix, sections)
    meta["lower_ref"] = model.lower_ref
    meta["input_dim"] = model.input_dim
    sections[f"{prefix}/augmented"] = model.augmented_inputs[0]
    return meta


# -- (de)serialization -----------------------------------------------------------

def bundle_parts(bundle: TwinBundle):
    """Split a bundle into JSON-able metadata and named arrays."""
    sections = {}
    meta = {
        "version": bundle.version,
        "config": bundle.config,
        "info": bundle.info,
        "deformation_mode": bundle.deformation_mode,
        "lf_load": [_gp_parts(m, f"lf_load/{i}", sections) for i, m in enumerate(bundle.lf_load_models)],
        "lf_coeff": [_gp_parts(m, f"lf_coeff/{j}", sections) for j, m in enumerate(bundle.lf_coeff_models)],
        "hf_load": [_level2_parts(m, f"hf_load/{q}", sections) for q, m in enumerate(bundle.hf_load_models)],
        "hf_depth": [_level2_parts(m, f"hf_depth/{q}", sections) for q, m in enumerate(bundle.hf_depth_models)],
    }
    basis = bundle.pca_basis
    sections["pca/phi"] = basis.phi
    sections["pca/eigenvalues"] = basis.eigenvalues
    meta["pca"] = {"retained": basis.retained, "threshold": basis.threshold, "centered": basis.centered,
                   "transient_fraction": basis.transient_fraction}
    if basis.centered:
        sections["pca/center"] = basis.center
    topo = bundle.topology
    meta["topology"] = {"node_count": topo.node_count, "n_layers": topo.n_layers, "ring_nodes": topo.ring_nodes}
    for name in ("edges", "edge_kind", "panels", "panel_weights", "rest_positions"):
        sections[f"topology/{name}"] = getattr(topo, name)
    s = bundle.sensors
    meta["sensors"] = {"load_shackles": list(s.load_shackles), "depth_nodes": list(s.depth_nodes),
                       "depth_values": list(s.depth_values), "n_lines": s.n_lines, "node_count": s.node_count}
    meta["gcn"] = bundle.gcn is not None
    if bundle.gcn is not None:
        for name, arr in model_arrays(bundle.gcn).items():
            sections[f"gcn/{name}"] = arr
    return meta, sections


def _group(sections, prefix):
    n = len(prefix) + 1
    return {k[n:]: v for k, v in sections.items() if k.startswith(prefix + "/")}


def bundle_from_parts(meta, sections) -> TwinBundle:
    lf_load = tuple(_gp_from(m, f"lf_load/{i}", sections) for i, m in enumerate(meta["lf_load"]))
    lf_coeff = tuple(_gp_from(m, f"lf_coeff/{j}", sections) for j, m in enumerate(meta["lf_coeff"]))
    p = meta["pca"]
    basis = PcaBasis(sections["pca/phi"], sections["pca/eigenvalues"], p["retained"], p["threshold"],
                     p["centered"], sections.get("pca/center"), p["transient_fraction"])
    t = meta["topology"]
    topo = CageTopology(t["node_count"], t["n_layers"], t["ring_nodes"], sections["topology/edges"],
                        sections["topology/edge_kind"], sections["topology/panels"],
                        sections["topology/panel_weights"], sections["topology/rest_positions"])
    s = meta["sensors"]
    sensors = SensorConfig(tuple(s["load_shackles"]), tuple(s["depth_nodes"]), tuple(s["depth_values"]),
                           s["n_lines"], s["node_count"])

    def level2(kind, q, m):
        ref = m["lower_ref"]
        parts = ref.split("/")
        if parts[0] == "lf_load":
            lower = lf_load[int(parts[1])]
        elif parts[0] == "pca_node":
            node = int(parts[1])
            axis = "xyz".index(parts[2])
            lower = PcaNodeSurrogate(lf_coeff, basis.phi[3 * node + axis], node, axis)
        else:
            raise CorruptBundle(f"{kind}/{q}: unknown lower-level reference {ref!r}")
        top = _gp_from(m, f"{kind}/{q}", sections)
        return NargpModel((lower, top), m["input_dim"], (sections[f"{kind}/{q}/augmented"],), ref)

    hf_load = tuple(level2("hf_load", q, m) for q, m in enumerate(meta["hf_load"]))
    hf_depth = tuple(level2("hf_depth", q, m) for q, m in enumerate(meta["hf_depth"]))
    gcn = model_from_arrays(_group(sections, "gcn")) if meta["gcn"] else None
    return TwinBundle(lf_load, lf_coeff, hf_load, hf_depth, basis, topo, sensors, meta["deformation_mode"],
                      gcn, meta["version"], meta["config"], meta["info"])


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def bundle_bytes(bundle: TwinBundle) -> bytes:
    meta, arrays = bundle_parts(bundle)
    blobs = []
    table = []
    offset = 0
    for name in sorted(arrays):
        blob = _io.array_bytes(np.ascontiguousarray(arrays[name]))
        table.append({"name": name, "offset": offset, "length": len(blob),
                      "sha256": hashlib.sha256(blob).hexdigest()})
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps({"format_version": FORMAT_VERSION, "meta": meta, "sections": table},
                        sort_keys=True, separators=(",", ":"), default=_json_default).encode("utf-8")
    prefix = _PREFIX.pack(MAGIC, FORMAT_VERSION, len(header), hashlib.sha256(header).digest())
    return prefix + header + b"".join(blobs)


def save_bundle(bundle: TwinBundle, path):
    """Write atomically: a temporary file in the same directory is renamed into place."""
    path = Path(path)
    data = bundle_bytes(bundle)
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def parse_bundle(data: bytes) -> TwinBundle:
    if len(data) < _PREFIX.size:
        raise CorruptBundle("file is shorter than the bundle prefix")
    magic, version, header_len, header_sha = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise CorruptBundle("not a twin bundle (bad magic)")
    if version > FORMAT_VERSION or version < 1:
        raise VersionUnsupported(f"bundle format {version} is not supported (this build reads up to {FORMAT_VERSION})")
    start = _PREFIX.size
    header = data[start:start + header_len]
    if len(header) != header_len or hashlib.sha256(header).digest() != header_sha:
        raise CorruptBundle("header checksum mismatch")
    try:
        doc = json.loads(header.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptBundle(f"header is not valid JSON: {exc}") from exc
    if doc.get("format_version") != version:
        raise CorruptBundle("header and prefix disagree on the format version")
    body = data[start + header_len:]
    sections = {}
    expected = 0
    for entry in doc["sections"]:
        blob = body[entry["offset"]:entry["offset"] + entry["length"]]
        if len(blob) != entry["length"] or hashlib.sha256(blob).hexdigest() != entry["sha256"]:
            raise CorruptBundle(f"section {entry['name']!r} is truncated or altered")
        sections[entry["name"]] = _io.read_array(blob)
        expected = max(expected, entry["offset"] + entry["length"])
    if len(body) != expected:
        raise CorruptBundle("trailing bytes after the last section")
    try:
        return bundle_from_parts(doc["meta"], sections)
    except (KeyError, IndexError, TypeError, ValueError) as exc:
        if isinstance(exc, (CorruptBundle, ModelMissing)):
            raise
        raise CorruptBundle(f"bundle contents are inconsistent: {exc}") from exc


def load_bundle(path) -> TwinBundle:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise UnreadableSource(f"cannot read bundle {path}: {exc}") from exc
    return parse_bundle(data)
