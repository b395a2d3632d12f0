import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cagetwin.errors import AsymmetricInput, DimensionMismatch, Divergence, EmptyDataset
from cagetwin.gcn import (
    GcnConfig,
    GcnModel,
    default_node_weights,
    fit_gcn,
    gcn_forward,
    glorot,
    loss_and_grads,
    model_arrays,
    model_from_arrays,
    node_features,
    normalized_adjacency,
    swish,
    swish_grad,
    train_gcn,
    weighted_mse_loss,
)
from cagetwin.sim.seastate import SeaState
from cagetwin.sim.topology import cage

TOY_EDGES = [(0, 1), (1, 2), (2, 3), (3, 4), (0, 4), (1, 3)]


def toy_adjacency(n=5, edges=TOY_EDGES):
    A = np.zeros((n, n))
    for a, b in edges:
        A[a, b] = A[b, a] = 1.0
    return A


def random_graph(rng, n):
    A = np.triu((rng.random((n, n)) < 0.4).astype(float), 1)
    return A + A.T


@pytest.fixture(scope="module")
def topo():
    return cage()


# -- adjacency normalization -------------------------------------------------

def test_isolated_node():
    np.testing.assert_array_equal(normalized_adjacency(np.zeros((1, 1))).toarray(), [[1.0]])


def test_two_connected_nodes():
    A_hat = normalized_adjacency(np.array([[0, 1], [1, 0]])).toarray()
    np.testing.assert_allclose(A_hat, [[0.5, 0.5], [0.5, 0.5]], atol=1e-15)


def test_cage_spectrum_bounded(topo):
    A_hat = normalized_adjacency(topo.adjacency).toarray()
    np.testing.assert_array_equal(A_hat, A_hat.T)
    eig = np.linalg.eigvalsh(A_hat)
    assert np.max(np.abs(eig)) <= 1 + 1e-10
    # the top eigenvalue of the normalized operator is exactly 1
    assert eig[-1] == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize(
    "A",
    [np.array([[0, 1], [0, 0]]), np.array([[1, 0], [0, 0]]), np.zeros((2, 3))],
    ids=["asymmetric", "self-loop", "non-square"],
)
def test_adjacency_rejected(A):
    with pytest.raises(AsymmetricInput):
        normalized_adjacency(A)


# -- activation --------------------------------------------------------------

def test_swish_values():
    assert swish(0.0) == 0.0
    assert swish(10.0) == pytest.approx(9.999546, abs=1e-6)
    assert swish(-10.0) == pytest.approx(-4.5397869e-4, rel=1e-7)


@given(st.floats(-30, 30))
def test_swish_grad_matches_fd(x):
    h = 1e-6
    fd = (swish(x + h) - swish(x - h)) / (2 * h)
    assert swish_grad(x) == pytest.approx(fd, abs=1e-7)


# -- node weights ------------------------------------------------------------

def test_default_node_weights(topo):
    w = default_node_weights(topo)
    layer = topo.layer
    assert w.shape == (321,) and np.all(w > 0)
    assert w[320] == 4.0 and np.argmax(w) == 320
    assert w[320] > w[layer == 10].max() > w[layer == 1].max()
    assert w[layer >= 6][:-1].min() > w[layer <= 5].max()
    assert np.unique(w[layer == 3]).size == 1


# -- loss --------------------------------------------------------------------

def test_loss_zero_at_truth(rng):
    y = rng.normal(size=(7, 3))
    assert weighted_mse_loss(y, y, np.ones(7)) == 0.0


def test_unit_weights_give_plain_mse(rng):
    p, y = rng.normal(size=(2, 7, 3))
    assert weighted_mse_loss(p, y, np.ones(7)) == pytest.approx(np.mean((p - y) ** 2), rel=1e-14)


def test_loss_linear_in_weights(rng):
    p, y = rng.normal(size=(2, 7, 3))
    w = rng.uniform(0.5, 2.0, 7)
    w2 = w.copy()
    w2[3] *= 2
    extra = w[3] * np.mean((p[3] - y[3]) ** 2) / 7
    assert weighted_mse_loss(p, y, w2) - weighted_mse_loss(p, y, w) == pytest.approx(extra, rel=1e-12)


def test_loss_shape_errors(rng):
    with pytest.raises(DimensionMismatch):
        weighted_mse_loss(np.zeros((3, 3)), np.zeros((4, 3)), np.ones(3))
    with pytest.raises(DimensionMismatch):
        weighted_mse_loss(np.zeros((3, 3)), np.zeros((3, 3)), np.ones(4))


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=25, deadline=None)
def test_loss_nonnegative(seed):
    rng = np.random.default_rng(seed)
    p, y = rng.normal(size=(2, 5, 3))
    assert weighted_mse_loss(p, y, rng.uniform(0.1, 3, 5)) > 0


# -- forward pass ------------------------------------------------------------

def toy_model(rng, n=5, dims=(6, 8, 8, 3), A=None):
    A = toy_adjacency() if A is None else A
    return GcnModel.untrained(A, dims, seed=int(rng.integers(1 << 31)))


def test_zero_weights_zero_output(rng):
    model = toy_model(rng)
    zero = model.with_weights([np.zeros_like(W) for W in model.layer_weights])
    assert np.all(gcn_forward(zero, rng.normal(size=(5, 6))) == 0.0)


def test_cage_output_shape(topo, rng):
    model = GcnModel.untrained(topo.adjacency)
    X = node_features(topo.rest_positions, [SeaState(0.5, 45.0)])[0]
    assert gcn_forward(model, X).shape == (321, 3)
    assert gcn_forward(model, np.stack([X, X])).shape == (2, 321, 3)


def test_feature_count_checked(rng):
    with pytest.raises(DimensionMismatch):
        gcn_forward(toy_model(rng), np.zeros((5, 4)))


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=20, deadline=None)
def test_permutation_equivariance(seed):
    rng = np.random.default_rng(seed)
    n = 5 if seed % 2 else int(rng.integers(3, 9))
    A = toy_adjacency() if n == 5 and seed % 2 else random_graph(rng, n)
    perm = rng.permutation(n)
    P = np.eye(n)[perm]
    model = GcnModel.untrained(A, (6, 8, 8, 3), seed=seed % 1000)
    permuted = GcnModel.untrained(P @ A @ P.T, (6, 8, 8, 3), seed=seed % 1000)
    X = rng.normal(size=(n, 6))
    np.testing.assert_allclose(gcn_forward(permuted, X[perm]), gcn_forward(model, X)[perm], atol=1e-10)


def test_final_layer_scaling(rng):
    model = toy_model(rng)
    X = rng.normal(size=(3, 5, 6))
    c = 2.7
    W = list(model.layer_weights)
    W[-1] = c * W[-1]
    np.testing.assert_allclose(gcn_forward(model.with_weights(W), X), c * gcn_forward(model, X), rtol=1e-13)


def test_node_features_broadcast(topo):
    F = node_features(topo.rest_positions, [SeaState(0.3, 90.0)])[0]
    assert F.shape == (321, 6)
    np.testing.assert_array_equal(F[:, :3], topo.rest_positions)
    assert np.all(F[:, 3:] == F[0, 3:])
    np.testing.assert_allclose(F[0, 3:], [0.3, 1.0, 0.0], atol=1e-15)


# -- gradients ---------------------------------------------------------------

def fd_gradient_error(seed):
    rng = np.random.default_rng(seed)
    A_hat = normalized_adjacency(toy_adjacency())
    dims = (6, 4, 4, 3)
    Ws = [rng.normal(size=(a, b)) for a, b in zip(dims[:-1], dims[1:])]
    X = rng.normal(size=(5, 2, 6))
    Y = rng.normal(size=(5, 2, 3))
    w = rng.uniform(0.5, 2.0, 5)
    _, grads = loss_and_grads(Ws, A_hat, X, Y, w)
    worst = 0.0
    h = 1e-5
    for l, W in enumerate(Ws):
        fd = np.empty_like(W)
        for idx in np.ndindex(W.shape):
            W[idx] += h
            up = loss_and_grads(Ws, A_hat, X, Y, w)[0]
            W[idx] -= 2 * h
            down = loss_and_grads(Ws, A_hat, X, Y, w)[0]
            W[idx] += h
            fd[idx] = (up - down) / (2 * h)
        worst = max(worst, np.linalg.norm(grads[l] - fd) / np.linalg.norm(fd))
    return worst


@pytest.mark.parametrize("seed", range(5))
def test_gradients_match_finite_differences(seed):
    assert fd_gradient_error(seed) < 1e-4


def test_loss_and_grads_value(rng):
    A_hat = normalized_adjacency(toy_adjacency())
    Ws = [glorot(rng, 6, 4), glorot(rng, 4, 4), glorot(rng, 4, 3)]
    X = rng.normal(size=(5, 3, 6))
    Y = rng.normal(size=(5, 3, 3))
    w = rng.uniform(0.5, 2.0, 5)
    loss, _ = loss_and_grads(Ws, A_hat, X, Y, w)
    model = GcnModel(tuple(Ws), A_hat, np.zeros(6), np.ones(6), np.ones(3))
    pred = gcn_forward(model, X.transpose(1, 0, 2))
    assert loss == pytest.approx(weighted_mse_loss(pred, Y.transpose(1, 0, 2), w), rel=1e-12)


# -- training ----------------------------------------------------------------

def toy_dataset(rng, s=6):
    X = rng.normal(size=(s, 5, 6))
    Y = np.tanh(X[..., :3]) + 0.1 * X[..., 3:]
    return X, Y


def test_training_is_deterministic(rng):
    X, Y = toy_dataset(rng)
    cfg = GcnConfig(hidden=(6, 8, 8, 3), epochs=50, learning_rate=0.05, seed=3)
    a = train_gcn(X, Y, toy_adjacency(), cfg)
    b = train_gcn(X, Y, toy_adjacency(), cfg)
    for Wa, Wb in zip(a.layer_weights, b.layer_weights):
        assert Wa.tobytes() == Wb.tobytes()


def test_weight_homogeneity(rng):
    X, Y = toy_dataset(rng)
    c = 4.0
    base = GcnConfig(hidden=(6, 8, 8, 3), epochs=40, learning_rate=0.05, seed=1)
    scaled = GcnConfig(hidden=(6, 8, 8, 3), epochs=40, learning_rate=0.05 / c, seed=1)
    a = train_gcn(X, Y, toy_adjacency(), base, np.ones(5))
    b = train_gcn(X, Y, toy_adjacency(), scaled, np.full(5, c))
    assert a.history["best_epoch"] == b.history["best_epoch"]
    for Wa, Wb in zip(a.layer_weights, b.layer_weights):
        np.testing.assert_allclose(Wa, Wb, rtol=1e-12, atol=1e-14)


@pytest.fixture(scope="module")
def single_sample(topo):
    from cagetwin.sim.equilibrium import CageModel

    sea = SeaState(0.6, 30.0)
    deformation, _, _ = CageModel(topo).solve(sea)
    return sea, deformation


def test_single_sample_loss_drops(topo, single_sample):
    model = fit_gcn([single_sample], topo, GcnConfig(epochs=2000, learning_rate=0.2))
    loss = model.history["train_loss"]
    assert loss[-1] < 0.05 and loss[-1] < loss[0] / 30


@pytest.mark.xfail(strict=True, reason="plain gradient descent plateaus near 2.5e-2 on the full cage in 2000 epochs")
def test_single_sample_overfits(topo, single_sample):
    model = fit_gcn([single_sample], topo, GcnConfig(epochs=2000, learning_rate=0.5))
    assert model.history["best_val_loss"] < 1e-3


def test_best_validation_checkpoint(rng):
    X, Y = toy_dataset(rng, s=10)
    model = train_gcn(X, Y, toy_adjacency(), GcnConfig(hidden=(6, 8, 8, 3), epochs=30, learning_rate=0.05))
    val = model.history["val_loss"]
    assert model.history["validation_index"].size == 1
    assert model.history["best_val_loss"] <= val.min()


def test_divergence_reports_epoch(rng):
    X, Y = toy_dataset(rng)
    with np.errstate(all="ignore"), pytest.raises(Divergence) as info:
        train_gcn(X, 1e3 * Y, toy_adjacency(), GcnConfig(hidden=(6, 8, 8, 3), epochs=500, learning_rate=10.0))
    assert info.value.epoch >= 1


def test_empty_dataset_rejected():
    with pytest.raises(EmptyDataset):
        train_gcn(np.zeros((0, 5, 6)), np.zeros((0, 5, 3)), toy_adjacency())
    with pytest.raises(EmptyDataset):
        fit_gcn([], cage())


def test_model_arrays_round_trip(rng):
    X, Y = toy_dataset(rng)
    model = train_gcn(X, Y, toy_adjacency(), GcnConfig(hidden=(6, 8, 8, 3), epochs=5))
    restored = model_from_arrays(model_arrays(model))
    assert restored.hidden_dims == (6, 8, 8, 3)
    assert gcn_forward(restored, X).tobytes() == gcn_forward(model, X).tobytes()
