"""Graph convolutional surrogate for the cage deformation field.

Three graph convolutions ``H <- act(A_hat H W)`` map per-node features (rest
coordinates and the broadcast current) to per-node displacements. The two
hidden layers use Swish, the output layer is linear. Training is plain
full-batch gradient descent on a node-weighted squared error, with the
gradients derived by hand.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.special import expit

from .errors import AsymmetricInput, DimensionMismatch, Divergence, EmptyDataset

log = logging.getLogger(__name__)

DEFAULT_HIDDEN = (6, 64, 64, 3)
LAYER_WEIGHTS = (1.0, 2.0, 4.0)  # layers 1-5, layers 6-10, bottom node


def normalized_adjacency(A):
    """D^-1/2 (A + I) D^-1/2 as a sparse CSR matrix."""
    A = sparse.csr_matrix(A, dtype=float)
    if A.shape[0] != A.shape[1]:
        raise AsymmetricInput(f"adjacency must be square, got {A.shape}")
    if (A != A.T).nnz:
        raise AsymmetricInput("adjacency is not symmetric")
    if A.diagonal().any():
        raise AsymmetricInput("adjacency must have a zero diagonal")
    A_tilde = A + sparse.identity(A.shape[0], format="csr")
    d = np.asarray(A_tilde.sum(axis=1)).ravel()
    inv_sqrt = sparse.diags(1.0 / np.sqrt(d))
    return (inv_sqrt @ A_tilde @ inv_sqrt).tocsr()


def swish(x):
    """x * sigmoid(x)."""
    return x * expit(x)


def swish_grad(x):
    s = expit(x)
    return s + x * s * (1.0 - s)


def default_node_weights(topo, values=LAYER_WEIGHTS):
    """Per-node loss weights: upper layers, lower layers, bottom node."""
    layer = topo.layer
    w = np.where(layer <= 5, values[0], values[1]).astype(float)
    w[layer > topo.n_layers] = values[2]
    return w


def node_features(rest_positions, states):
    """(S, N, 6) features: rest x, y, z then speed, sin(dir), cos(dir)."""
    rest = np.asarray(rest_positions, dtype=float)
    states = list(states)
    out = np.empty((len(states), rest.shape[0], 6))
    out[:, :, :3] = rest
    for s, sea in enumerate(states):
        out[s, :, 3:] = sea.current_features()
    return out


def weighted_mse_loss(pred, truth, w):
    """(1/N) sum_i w_i (1/F) sum_j (pred_ij - truth_ij)^2, averaged over any leading batch axis."""
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    w = np.asarray(w, dtype=float)
    if pred.shape != truth.shape:
        raise DimensionMismatch(f"prediction {pred.shape} vs truth {truth.shape}")
    if pred.shape[-2] != w.size:
        raise DimensionMismatch(f"{w.size} node weights for {pred.shape[-2]} nodes")
    if np.any(w <= 0):
        raise ValueError("node weights must be positive")
    per_node = np.mean((pred - truth) ** 2, axis=-1)
    return float(np.mean(per_node @ w) / w.size) if per_node.ndim > 1 else float(per_node @ w / w.size)


@dataclass(frozen=True, eq=False)
class GcnModel:
    layer_weights: tuple
    norm_adjacency: sparse.csr_matrix
    feature_mean: np.ndarray
    feature_scale: np.ndarray
    target_scale: np.ndarray
    node_weights: np.ndarray | None = None
    seed: int = 0
    history: dict = field(default_factory=dict)

    @property
    def hidden_dims(self):
        return (self.layer_weights[0].shape[0],) + tuple(W.shape[1] for W in self.layer_weights)

    @classmethod
    def untrained(cls, A, dims=DEFAULT_HIDDEN, seed=0, node_weights=None):
        """Glorot-initialized model with identity normalization."""
        rng = np.random.default_rng(seed)
        weights = tuple(glorot(rng, a, b) for a, b in zip(dims[:-1], dims[1:]))
        return cls(weights, normalized_adjacency(A), np.zeros(dims[0]), np.ones(dims[0]),
                   np.ones(dims[-1]), node_weights, seed)

    def with_weights(self, weights):
        return GcnModel(tuple(weights), self.norm_adjacency, self.feature_mean, self.feature_scale,
                        self.target_scale, self.node_weights, self.seed, self.history)

    def predict(self, X):
        return gcn_forward(self, X)


def glorot(rng, fan_in, fan_out):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def _propagate(A_hat, H):
    """A_hat applied to a node-major (N, S, F) batch."""
    N = H.shape[0]
    return (A_hat @ H.reshape(N, -1)).reshape(H.shape)


def _forward(weights, A_hat, X):
    """Forward pass on a normalized node-major (N, S, F0) batch.

    ``A_hat H W`` is evaluated as ``(A_hat H) W`` or ``A_hat (H W)``,
    whichever propagates the narrower matrix. Each cache entry holds the
    layer input with a flag saying whether it was propagated first, plus
    the pre-activation with its sigmoid. The backward pass overwrites the cached
    pre-activations, so a cache is good for one backward call.
    """
    caches = []
    H = X
    last = len(weights) - 1
    for l, W in enumerate(weights):
        pre = W.shape[0] <= W.shape[1]
        if pre:
            H = _propagate(A_hat, H)
            Z = H @ W
        else:
            Z = _propagate(A_hat, H @ W)
        if l == last:
            caches.append((H, pre, Z, None))
            return Z, caches
        sig = expit(Z)
        caches.append((H, pre, Z, sig))
        H = Z * sig


def _backward(weights, A_hat, caches, dY):
    # A_hat is symmetric, so it is its own transpose in every product below
    grads = [None] * len(weights)
    dZ = dY
    for l in range(len(weights) - 1, -1, -1):
        H, pre, Z, sig = caches[l]
        if sig is not None:
            # swish'(z) = s + z s (1 - s), evaluated in place on the cache
            Z *= 1.0 - sig
            Z += 1.0
            Z *= sig
            dZ = dZ * Z
        if not pre:
            dZ = _propagate(A_hat, dZ)
        grads[l] = H.reshape(-1, H.shape[-1]).T @ dZ.reshape(-1, dZ.shape[-1])
        if l:
            dZ = dZ @ weights[l].T
            if pre:
                dZ = _propagate(A_hat, dZ)
    return grads


def loss_and_grads(weights, A_hat, X, Y, w):
    """Weighted loss on normalized node-major batches and its gradient for every W.

    ``X`` is (N, S, F0), ``Y`` is (N, S, F3) and ``w`` holds the N node weights.
    """
    out, caches = _forward(weights, A_hat, X)
    N, S, F = out.shape
    diff = out - Y
    wd = w[:, None, None] * diff
    loss = float(np.vdot(wd, diff) / (S * N * F))
    return loss, _backward(weights, A_hat, caches, (2.0 / (S * N * F)) * wd)


def gcn_forward(model: GcnModel, X):
    """Displacements (m) for an (N, F0) feature matrix or an (S, N, F0) batch."""
    X = np.asarray(X, dtype=float)
    single = X.ndim == 2
    Xb = X[None] if single else X
    if Xb.shape[-1] != model.hidden_dims[0]:
        raise DimensionMismatch(f"model expects {model.hidden_dims[0]} features, got {Xb.shape[-1]}")
    if Xb.shape[1] != model.norm_adjacency.shape[0]:
        raise DimensionMismatch(f"model has {model.norm_adjacency.shape[0]} nodes, input {Xb.shape[1]}")
    Z = np.ascontiguousarray(((Xb - model.feature_mean) / model.feature_scale).transpose(1, 0, 2))
    out, _ = _forward(model.layer_weights, model.norm_adjacency, Z)
    out = out.transpose(1, 0, 2) * model.target_scale
    return out[0] if single else out


@dataclass(frozen=True)
class GcnConfig:
    hidden: tuple = DEFAULT_HIDDEN
    learning_rate: float = 1e-2
    epochs: int = 5000
    seed: int = 0
    validation_fraction: float = 0.1
    log_every: int = 0


def train_gcn(features, targets, A, config: GcnConfig | None = None, node_weights=None) -> GcnModel:
    """Full-batch gradient descent with best-validation checkpointing.

    ``features`` is (S, N, F0), ``targets`` (S, N, 3) displacements in metres.
    Features are standardized per column; targets are divided by their
    per-axis RMS so that a zero prediction still means no displacement.
    """
    config = config or GcnConfig()
    X = np.asarray(features, dtype=float)
    Y = np.asarray(targets, dtype=float)
    if X.ndim != 3 or X.shape[0] == 0:
        raise EmptyDataset("no training samples")
    if Y.shape[:2] != X.shape[:2] or Y.shape[2] != config.hidden[-1]:
        raise DimensionMismatch(f"targets {Y.shape} do not match features {X.shape}")
    if X.shape[2] != config.hidden[0]:
        raise DimensionMismatch(f"{X.shape[2]} features but the first layer takes {config.hidden[0]}")
    S, N, _ = X.shape
    w = np.ones(N) if node_weights is None else np.asarray(node_weights, dtype=float)
    if w.size != N or np.any(w <= 0):
        raise ValueError("node weights must be positive, one per node")

    rng = np.random.default_rng(config.seed)
    weights = [glorot(rng, a, b) for a, b in zip(config.hidden[:-1], config.hidden[1:])]
    order = rng.permutation(S)
    n_val = int(round(config.validation_fraction * S)) if S > 1 else 0
    val_idx, train_idx = np.sort(order[:n_val]), np.sort(order[n_val:])

    flat = X[train_idx].reshape(-1, X.shape[2])
    f_mean = flat.mean(axis=0)
    f_scale = flat.std(axis=0)
    f_scale = np.where(f_scale > 0, f_scale, 1.0)
    t_scale = np.sqrt(np.mean(Y[train_idx] ** 2, axis=(0, 1)))
    t_scale = np.where(t_scale > 0, t_scale, 1.0)
    # node-major copies so that every propagation is a single sparse product
    Xt = np.ascontiguousarray(((X[train_idx] - f_mean) / f_scale).transpose(1, 0, 2))
    Yt = np.ascontiguousarray((Y[train_idx] / t_scale).transpose(1, 0, 2))
    Xv = np.ascontiguousarray(((X[val_idx] - f_mean) / f_scale).transpose(1, 0, 2))
    Yv = np.ascontiguousarray((Y[val_idx] / t_scale).transpose(1, 0, 2))
    A_hat = normalized_adjacency(A)

    def val_loss_of(weights):
        out, _ = _forward(weights, A_hat, Xv)
        return weighted_mse_loss(out.transpose(1, 0, 2), Yv.transpose(1, 0, 2), w)

    train_loss = np.empty(config.epochs)
    val_loss = np.empty(config.epochs) if n_val else None
    best = (math.inf, -1, [W.copy() for W in weights])
    for epoch in range(config.epochs):
        loss, grads = loss_and_grads(weights, A_hat, Xt, Yt, w)
        if not math.isfinite(loss):
            raise Divergence(epoch)
        train_loss[epoch] = loss
        if n_val:
            v = val_loss[epoch] = val_loss_of(weights)
        else:
            v = loss
        if v < best[0]:
            best = (v, epoch, [W.copy() for W in weights])
        if config.log_every and epoch % config.log_every == 0:
            log.info("epoch %d train %.6g val %.6g", epoch, loss, v)
        for W, g in zip(weights, grads):
            W -= config.learning_rate * g
    # the parameters after the final update are scored too
    v = val_loss_of(weights) if n_val else loss_and_grads(weights, A_hat, Xt, Yt, w)[0]
    if v < best[0]:
        best = (v, config.epochs, [W.copy() for W in weights])
    history = {"train_loss": train_loss, "best_epoch": best[1], "best_val_loss": best[0],
               "validation_index": val_idx}
    if val_loss is not None:
        history["val_loss"] = val_loss
    return GcnModel(tuple(best[2]), A_hat, f_mean, f_scale, t_scale, w, config.seed, history)


def fit_gcn(pairs, topo, config: GcnConfig | None = None, node_weights=None) -> GcnModel:
    """Train on a list of ``(SeaState, CageDeformation)`` pairs over ``topo``.

    Node weights default to :func:`default_node_weights`.
    """
    pairs = list(pairs)
    if not pairs:
        raise EmptyDataset("no training pairs")
    targets = []
    for sea, deformation in pairs:
        d = np.asarray(getattr(deformation, "displacements", deformation), dtype=float)
        if d.shape != (topo.node_count, 3):
            raise DimensionMismatch(f"deformation {d.shape} does not match {topo.node_count} nodes")
        targets.append(d)
    features = node_features(topo.rest_positions, [sea for sea, _ in pairs])
    if node_weights is None:
        node_weights = default_node_weights(topo)
    return train_gcn(features, np.stack(targets), topo.adjacency, config, node_weights)


def model_arrays(model: GcnModel):
    """Flat name -> array mapping holding everything needed to rebuild the model."""
    out = {f"W{l}": W for l, W in enumerate(model.layer_weights)}
    A = model.norm_adjacency.tocsr()
    out.update(
        A_data=A.data, A_indices=A.indices, A_indptr=A.indptr,
        A_shape=np.asarray(A.shape, dtype=np.int64),
        feature_mean=model.feature_mean, feature_scale=model.feature_scale,
        target_scale=model.target_scale, seed=np.asarray(model.seed, dtype=np.int64),
    )
    if model.node_weights is not None:
        out["node_weights"] = np.asarray(model.node_weights, dtype=float)
    return out


def model_from_arrays(arrays) -> GcnModel:
    n_layers = sum(1 for k in arrays if k.startswith("W"))
    weights = tuple(np.asarray(arrays[f"W{l}"], dtype=float) for l in range(n_layers))
    A = sparse.csr_matrix((arrays["A_data"], arrays["A_indices"], arrays["A_indptr"]),
                          shape=tuple(int(v) for v in arrays["A_shape"]))
    return GcnModel(weights, A, arrays["feature_mean"], arrays["feature_scale"], arrays["target_scale"],
                    arrays.get("node_weights"), int(np.asarray(arrays["seed"]).ravel()[0]))
