import math

import numpy as np
import pytest

from cagetwin.errors import InvalidGeometry
from cagetwin.sim import topology
from cagetwin.sim.topology import build_topology, cage, node_index, rest_geometry


@pytest.fixture(scope="module")
def topo():
    return cage()


def test_edge_count(topo):
    assert topo.edges.shape == (640, 2)
    assert len({tuple(sorted(e)) for e in topo.edges.tolist()}) == 640


def test_degree_sequence(topo):
    deg = topo.degrees()
    assert np.all(deg[:32] == 3)
    assert np.all(deg[32:320] == 4)
    assert deg[320] == 32
    assert sorted(np.bincount(deg).nonzero()[0].tolist()) == [3, 4, 32]


def test_apex_fan(topo):
    A = topo.adjacency
    assert set(np.flatnonzero(A[320]).tolist()) == set(range(288, 320))


def test_adjacency_symmetric_no_loops(topo):
    A = topo.adjacency
    assert np.array_equal(A, A.T)
    assert np.all(np.diag(A) == 0)


def test_vertical_rule(topo):
    # one-based node 33 (layer 2, position 1) hangs below node 1
    assert topo.adjacency[32, 0] == 1


def test_layers_and_positions(topo):
    assert topo.layer[0] == 1 and topo.layer[319] == 10 and topo.layer[320] == 11
    assert topo.ring_position[33] == 1 and topo.ring_position[320] == -1
    assert node_index(3, 33) == node_index(3, 1) == 65


def test_rest_geometry_defaults(topo):
    pos = topo.rest_positions
    assert np.hypot(pos[:32, 0], pos[:32, 1]) == pytest.approx(np.full(32, 25.0), abs=1e-12)
    assert pos[320].tolist() == [0.0, 0.0, -31.0]
    az = np.degrees(np.arctan2(pos[1, 1], pos[1, 0]) - np.arctan2(pos[0, 1], pos[0, 0]))
    assert az == pytest.approx(11.25, abs=1e-12)


def test_taper_below_cylinder():
    pos = rest_geometry()
    depth = -pos[:320:32, 2]
    radius = np.hypot(pos[:320:32, 0], pos[:320:32, 1])
    assert np.all(radius[depth <= 18.0] == 25.0)
    assert np.all(np.diff(radius[depth > 18.0]) < 0)


def test_rest_positions_read_only(topo):
    with pytest.raises(ValueError):
        topo.rest_positions[0, 0] = 1.0


@pytest.mark.parametrize("kwargs", [{"diameter": -1.0}, {"cyl_depth": 31.0, "bottom_depth": 31.0}])
def test_invalid_geometry(kwargs):
    with pytest.raises(InvalidGeometry):
        rest_geometry(**kwargs)


def test_rotation_permutation_preserves_graph(topo):
    perm = topo.rotation_permutation(1)
    A = topo.adjacency
    assert np.array_equal(A[np.ix_(perm, perm)], A)
    assert np.allclose(topo.rest_positions[perm[:320]], rotate(topo.rest_positions[:320], 11.25), atol=1e-12)


def test_reflection_permutation(topo):
    perm = topo.reflection_permutation()
    mirrored = topo.rest_positions * [1, -1, 1]
    assert np.allclose(topo.rest_positions[perm], mirrored, atol=1e-12)


def test_panels_cover_every_ring_edge():
    topo = build_topology()
    assert topo.panels.shape == (320, 4)
    assert np.allclose(topo.panel_weights.sum(axis=1), 1.0)


def test_small_cage():
    t = build_topology(n_layers=3, ring_nodes=4)
    assert t.node_count == 13
    assert t.edges.shape[0] == 3 * 4 + 2 * 4 + 4


def rotate(points, degrees):
    c, s = math.cos(math.radians(degrees)), math.sin(math.radians(degrees))
    R = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])
    return points @ R.T


def test_module_constants():
    assert topology.N_LAYERS == 10 and topology.RING_NODES == 32
