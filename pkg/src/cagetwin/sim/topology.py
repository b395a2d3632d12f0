"""Cage graph and rest geometry.

Nodes are numbered layer by layer from the collar down: node ``(l, k)`` for
layer ``l`` in 1..10 and ring position ``k`` in 0..31 has id
``(l - 1) * 32 + k + 1``; the bottom node is 321. Arrays in this package are
zero-based, so node id ``i`` lives in row ``i - 1``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidGeometry

N_LAYERS = 10
RING_NODES = 32
NODE_COUNT = N_LAYERS * RING_NODES + 1
APEX = NODE_COUNT - 1  # zero-based row of node 321

EDGE_RING, EDGE_VERTICAL, EDGE_APEX = 0, 1, 2


def node_index(layer, k, ring_nodes=RING_NODES):
    """Zero-based row of ring node ``k`` (wrapped) in 1-based ``layer``."""
    return (layer - 1) * ring_nodes + (k % ring_nodes)


@dataclass(frozen=True, eq=False)
class CageTopology:
    node_count: int
    n_layers: int
    ring_nodes: int
    edges: np.ndarray  # (E, 2) zero-based node rows
    edge_kind: np.ndarray  # (E,) EDGE_RING / EDGE_VERTICAL / EDGE_APEX
    panels: np.ndarray  # (P, 4) slots a, b, c, d
    panel_weights: np.ndarray  # (P, 4) share of the panel force per slot
    rest_positions: np.ndarray | None = None

    @property
    def layer(self):
        """1-based layer of every node; the bottom node reports n_layers + 1."""
        out = np.repeat(np.arange(1, self.n_layers + 1), self.ring_nodes)
        return np.append(out, self.n_layers + 1)

    @property
    def ring_position(self):
        out = np.tile(np.arange(self.ring_nodes), self.n_layers)
        return np.append(out, -1)

    @property
    def adjacency(self):
        A = np.zeros((self.node_count, self.node_count), dtype=np.int8)
        A[self.edges[:, 0], self.edges[:, 1]] = 1
        A[self.edges[:, 1], self.edges[:, 0]] = 1
        return A

    def degrees(self):
        return np.bincount(self.edges.ravel(), minlength=self.node_count)

    def with_rest_positions(self, positions):
        positions = np.asarray(positions, dtype=float)
        if positions.shape != (self.node_count, 3):
            raise InvalidGeometry(f"expected ({self.node_count}, 3) rest positions, got {positions.shape}")
        positions.setflags(write=False)
        return CageTopology(self.node_count, self.n_layers, self.ring_nodes, self.edges,
                            self.edge_kind, self.panels, self.panel_weights, positions)

    def rotation_permutation(self, steps=1):
        """Row permutation mapping node (l, k) to (l, k + steps)."""
        perm = np.empty(self.node_count, dtype=np.int64)
        k = np.arange(self.ring_nodes)
        for layer in range(1, self.n_layers + 1):
            perm[node_index(layer, k, self.ring_nodes)] = node_index(layer, k + steps, self.ring_nodes)
        perm[-1] = self.node_count - 1
        return perm

    def reflection_permutation(self):
        """Row permutation mapping node (l, k) to its mirror (l, -k) about the x-z plane."""
        perm = np.empty(self.node_count, dtype=np.int64)
        k = np.arange(self.ring_nodes)
        for layer in range(1, self.n_layers + 1):
            perm[node_index(layer, k, self.ring_nodes)] = node_index(layer, -k, self.ring_nodes)
        perm[-1] = self.node_count - 1
        return perm


def build_topology(n_layers=N_LAYERS, ring_nodes=RING_NODES) -> CageTopology:
    """Cage graph: ring cycles joined by vertical links, closed by the bottom fan."""
    k = np.arange(ring_nodes)
    apex = n_layers * ring_nodes
    ring = [np.column_stack([node_index(l, k, ring_nodes), node_index(l, k + 1, ring_nodes)])
            for l in range(1, n_layers + 1)]
    vertical = [np.column_stack([node_index(l, k, ring_nodes), node_index(l + 1, k, ring_nodes)])
                for l in range(1, n_layers)]
    bottom = np.column_stack([node_index(n_layers, k, ring_nodes), np.full(ring_nodes, apex)])
    edges = np.vstack(ring + vertical + [bottom]).astype(np.int64)
    kind = np.concatenate([
        np.full(n_layers * ring_nodes, EDGE_RING),
        np.full((n_layers - 1) * ring_nodes, EDGE_VERTICAL),
        np.full(ring_nodes, EDGE_APEX),
    ]).astype(np.int8)

    quads = [np.column_stack([node_index(l, k, ring_nodes), node_index(l, k + 1, ring_nodes),
                              node_index(l + 1, k + 1, ring_nodes), node_index(l + 1, k, ring_nodes)])
             for l in range(1, n_layers)]
    tris = np.column_stack([node_index(n_layers, k, ring_nodes), node_index(n_layers, k + 1, ring_nodes),
                            np.full(ring_nodes, apex), np.full(ring_nodes, apex)])
    panels = np.vstack(quads + [tris]).astype(np.int64)
    n_quads = (n_layers - 1) * ring_nodes
    weights = np.empty((panels.shape[0], 4))
    weights[:n_quads] = 0.25
    # a triangle spreads its force in thirds; the repeated apex slot splits its third
    weights[n_quads:] = [1 / 3, 1 / 3, 1 / 6, 1 / 6]
    for arr in (edges, kind, panels, weights):
        arr.setflags(write=False)
    return CageTopology(apex + 1, n_layers, ring_nodes, edges, kind, panels, weights)


def layer_depths(n_layers, bottom_depth):
    """Depth below the collar of each ring layer; layers are evenly spaced."""
    return np.arange(n_layers) * bottom_depth / n_layers


def rest_geometry(diameter=50.0, cyl_depth=18.0, bottom_depth=31.0, n_layers=N_LAYERS,
                  ring_nodes=RING_NODES):
    """Rest coordinates (m) of all nodes; z is up with the collar at z = 0.

    Rings down to ``cyl_depth`` have radius ``diameter / 2``; below it the
    net tapers linearly to the bottom node on the axis at ``bottom_depth``.
    """
    if not (diameter > 0 and cyl_depth > 0 and bottom_depth > 0):
        raise InvalidGeometry("cage dimensions must be positive")
    if bottom_depth <= cyl_depth:
        raise InvalidGeometry("bottom_depth must exceed cyl_depth")
    radius = 0.5 * diameter
    depth = layer_depths(n_layers, bottom_depth)
    r = np.where(depth <= cyl_depth, radius, radius * (bottom_depth - depth) / (bottom_depth - cyl_depth))
    az = np.deg2rad(np.arange(ring_nodes) * 360.0 / ring_nodes)
    pos = np.empty((n_layers * ring_nodes + 1, 3))
    for l in range(n_layers):
        rows = slice(l * ring_nodes, (l + 1) * ring_nodes)
        pos[rows, 0] = r[l] * np.cos(az)
        pos[rows, 1] = r[l] * np.sin(az)
        pos[rows, 2] = -depth[l]
    pos[-1] = (0.0, 0.0, -bottom_depth)
    return pos


def cage(geometry=None) -> CageTopology:
    """Topology with rest positions from a geometry mapping (defaults if None)."""
    geometry = dict(geometry or {})
    n_layers = int(geometry.pop("n_layers", N_LAYERS))
    ring_nodes = int(geometry.pop("ring_nodes", RING_NODES))
    topo = build_topology(n_layers, ring_nodes)
    return topo.with_rest_positions(rest_geometry(n_layers=n_layers, ring_nodes=ring_nodes, **geometry))
