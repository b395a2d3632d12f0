"""Virtual load shackles and depth sensors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidSensorIndex
from .topology import CageTopology

SHACKLE_NAMES = tuple(f"shackle_{i}" for i in range(1, 6))
DEPTH_NAMES = tuple(f"depth_{i}" for i in range(1, 4))


@dataclass(frozen=True)
class SensorConfig:
    """Line indices of the load shackles and zero-based rows of the depth-sensor nodes."""

    load_shackles: tuple = (4, 5, 6, 7, 8)
    depth_nodes: tuple = (64, 160, 320)
    depth_values: tuple = (7.0, 15.0, 31.0)
    n_lines: int = 12
    node_count: int = 321

    def __post_init__(self):
        if len(self.load_shackles) != 5 or len(self.depth_nodes) != 3:
            raise InvalidSensorIndex("expected 5 load shackles and 3 depth sensors")
        for i in self.load_shackles:
            if not 0 <= i < self.n_lines:
                raise InvalidSensorIndex(f"shackle line index {i} outside 0..{self.n_lines - 1}")
        for node in self.depth_nodes:
            if not 0 <= node < self.node_count:
                raise InvalidSensorIndex(f"depth sensor node {node} outside 0..{self.node_count - 1}")
        if any(b <= a for a, b in zip(self.depth_values, self.depth_values[1:])):
            raise InvalidSensorIndex("depth sensors must be ordered by strictly increasing depth")

    @classmethod
    def from_depths(cls, topo: CageTopology, depths=(7.0, 15.0, 31.0), azimuth=0.0,
                    load_shackles=(4, 5, 6, 7, 8), n_lines=12):
        """Attach depth sensors to the nodes nearest ``depths`` on one meridian.

        Candidates are the ring nodes at the ring position closest to
        ``azimuth`` (degrees) plus the bottom node.
        """
        if topo.rest_positions is None:
            raise InvalidSensorIndex("topology has no rest positions")
        k = int(round(azimuth / (360.0 / topo.ring_nodes))) % topo.ring_nodes
        rows = np.append(np.arange(topo.n_layers) * topo.ring_nodes + k, topo.node_count - 1)
        node_depth = -topo.rest_positions[rows, 2]
        nodes = tuple(int(rows[np.argmin(np.abs(node_depth - d))]) for d in depths)
        if len(set(nodes)) != len(nodes):
            raise InvalidSensorIndex(f"depth sensors {depths} collapse onto the same node")
        return cls(tuple(int(i) for i in load_shackles), nodes, tuple(float(d) for d in depths),
                   n_lines, topo.node_count)

    @classmethod
    def from_params(cls, topo, params):
        s = params["sensors"]
        return cls.from_depths(topo, s["depth_sensor_depths"], s["reference_azimuth"],
                               s["load_shackles"], params["mooring"]["n_lines"])


@dataclass(frozen=True, eq=False)
class SensorReadings:
    shackle_loads: np.ndarray  # (5,) kN
    depth_displacements: np.ndarray  # (3,) m, vertical, positive up

    def as_array(self):
        return np.concatenate([self.shackle_loads, self.depth_displacements])


def sensor_extract(deformation, loads, cfg: SensorConfig) -> SensorReadings:
    D = np.asarray(deformation.displacements if hasattr(deformation, "displacements") else deformation)
    T = np.asarray(loads.tensions if hasattr(loads, "tensions") else loads)
    if T.shape[-1] != cfg.n_lines:
        raise InvalidSensorIndex(f"expected {cfg.n_lines} line tensions, got {T.shape[-1]}")
    if D.shape[-2] != cfg.node_count:
        raise InvalidSensorIndex(f"expected {cfg.node_count} nodes, got {D.shape[-2]}")
    return SensorReadings(T[..., list(cfg.load_shackles)], D[..., list(cfg.depth_nodes), 2])
