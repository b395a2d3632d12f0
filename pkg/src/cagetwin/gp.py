"""Single-fidelity Gaussian-process regression with squared-exponential ARD kernels.

Hyperparameters are optimised in log space by multi-start L-BFGS-B on the
exact log marginal likelihood and its analytic gradient. Inputs and outputs
are standardised per column before fitting; the constants live on the model
so that predictions come back in data units.
"""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg, optimize
from scipy.linalg import lapack
from scipy.spatial import cKDTree

from . import backend
from .errors import (
    DegenerateData,
    DimensionMismatch,
    FitFailure,
    NotPositiveDefinite,
)

log = logging.getLogger(__name__)

LOG_2PI = np.log(2.0 * np.pi)
NOISE_FLOOR = 1e-6
JITTER_START = 1e-8
JITTER_MAX = 1e-4


@dataclass(frozen=True)
class GpHyperparams:
    """SE-ARD hyperparameters in natural (not log) units."""

    amplitude_var: float
    ard_weights: np.ndarray
    noise_var: float = NOISE_FLOOR

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.ard_weights, dtype=float))
        object.__setattr__(self, "ard_weights", w)
        if not self.amplitude_var > 0:
            raise ValueError("amplitude_var must be positive")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("ARD weights must be finite and nonnegative")
        if not self.noise_var >= 0:
            raise ValueError("noise_var must be nonnegative")

    @property
    def dim(self):
        return self.ard_weights.size


# -- datasets -----------------------------------------------------------------


def encode_directions(X, direction_columns):
    """Replace each direction column (degrees) by its (sin, cos) pair.

    Columns keep their order; a direction column at position j expands in
    place to two columns.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    direction_columns = set(direction_columns)
    cols = []
    for j in range(X.shape[1]):
        if j in direction_columns:
            rad = np.deg2rad(X[:, j])
            cols.extend([np.sin(rad), np.cos(rad)])
        else:
            cols.append(X[:, j])
    return np.column_stack(cols)


@dataclass(frozen=True)
class FidelityDataset:
    """Input/output pairs observed at one fidelity level."""

    level: int
    inputs: np.ndarray
    outputs: np.ndarray
    input_names: tuple = ()
    input_units: tuple = ()
    output_name: str = "y"
    output_unit: str = ""
    duplicate_tol: float = 1e-9

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        if X.shape[0] == 1 and np.ndim(self.inputs) == 1:
            X = X.T
        y = np.asarray(self.outputs, dtype=float).ravel()
        if X.shape[0] != y.shape[0]:
            raise DimensionMismatch(f"{X.shape[0]} input rows but {y.shape[0]} outputs")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("dataset contains non-finite values")
        names = tuple(self.input_names) or tuple(f"x{j}" for j in range(X.shape[1]))
        units = tuple(self.input_units) or ("",) * X.shape[1]
        if len(names) != X.shape[1] or len(units) != X.shape[1]:
            raise DimensionMismatch("column metadata does not match input width")
        if X.shape[0] > 1:
            pairs = cKDTree(X).query_pairs(self.duplicate_tol)
            if pairs:
                i, j = sorted(pairs)[0]
                raise DegenerateData(f"duplicate input rows {i} and {j} at level {self.level}")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "inputs", X)
        object.__setattr__(self, "outputs", y)
        object.__setattr__(self, "input_names", names)
        object.__setattr__(self, "input_units", units)

    @property
    def n(self):
        return self.inputs.shape[0]

    @property
    def input_dim(self):
        return self.inputs.shape[1]

    @property
    def direction_columns(self):
        return tuple(j for j, u in enumerate(self.input_units) if u in ("deg", "degree", "degrees"))

    def features(self, X=None):
        """Model-ready inputs: direction columns expanded to (sin, cos)."""
        X = self.inputs if X is None else X
        return encode_directions(X, self.direction_columns)


def _header(name, unit):
    return f"{name}[{unit}]" if unit else name


def _split_header(col):
    col = col.strip()
    if col.endswith("]") and "[" in col:
        name, unit = col[:-1].split("[", 1)
        return name, unit
    return col, ""


def write_dataset(dataset, path, delimiter=","):
    """Write a dataset as delimited text; the header carries ``name[unit]``."""
    cols = [_header(n, u) for n, u in zip(dataset.input_names, dataset.input_units)]
    cols.append(_header(dataset.output_name, dataset.output_unit))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter)
        w.writerow(["# level", dataset.level])
        w.writerow(cols)
        for row, y in zip(dataset.inputs, dataset.outputs):
            w.writerow([repr(float(v)) for v in row] + [repr(float(y))])


def read_dataset(path, output=None, level=None, delimiter=","):
    """Read a delimited-text dataset.

    The output column defaults to the last one; ``output`` may name another
    column, in which case every remaining column is an input.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh, delimiter=delimiter))
    if rows and rows[0] and rows[0][0].startswith("#"):
        file_level = int(rows[0][1])
        rows = rows[1:]
    else:
        file_level = 1
    header = [_split_header(c) for c in rows[0]]
    data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    names = [h[0] for h in header]
    out_idx = len(header) - 1 if output is None else names.index(output)
    in_idx = [j for j in range(len(header)) if j != out_idx]
    return FidelityDataset(
        level=file_level if level is None else level,
        inputs=data[:, in_idx],
        outputs=data[:, out_idx],
        input_names=tuple(names[j] for j in in_idx),
        input_units=tuple(header[j][1] for j in in_idx),
        output_name=header[out_idx][0],
        output_unit=header[out_idx][1],
    )


# -- kernels ------------------------------------------------------------------


def _check_pair(X, X_prime, dim):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Xp = X if X_prime is None else np.atleast_2d(np.asarray(X_prime, dtype=float))
    if X.shape[1] != dim or Xp.shape[1] != dim:
        raise DimensionMismatch(f"expected {dim} columns, got {X.shape[1]} and {Xp.shape[1]}")
    return X, Xp


def se_ard_kernel(x, x_prime, hp: GpHyperparams) -> float:
    """sigma^2 * exp(-0.5 * sum_i w_i (x_i - x'_i)^2) for two single points."""
    x = np.asarray(x, dtype=float).ravel()
    xp = np.asarray(x_prime, dtype=float).ravel()
    if x.size != hp.dim or xp.size != hp.dim:
        raise DimensionMismatch(f"points of length {x.size}/{xp.size}, kernel dimension {hp.dim}")
    diff = x - xp
    return float(hp.amplitude_var * np.exp(-0.5 * np.sum(hp.ard_weights * diff * diff)))


def kernel_matrix(X, X_prime, hp: GpHyperparams):
    """Batched :func:`se_ard_kernel`; pass ``X_prime=None`` for the Gram matrix."""
    X, Xp = _check_pair(X, X_prime, hp.dim)
    if X_prime is None:
        Xc = np.ascontiguousarray(X)
        return backend.se_ard(Xc, Xc, hp.ard_weights, hp.amplitude_var)
    return backend.se_ard(X, Xp, hp.ard_weights, hp.amplitude_var)


def pairwise_sqdiff(X):
    """Stack of per-dimension squared differences, shape (d, n, n)."""
    X = np.asarray(X, dtype=float)
    diff = X.T[:, :, None] - X.T[:, None, :]
    return diff * diff


class SEArdKernel:
    """SE-ARD covariance parameterised by ``theta = [log amp, log w_1..w_d]``."""

    name = "se_ard"

    def __init__(self, dim):
        self.dim = int(dim)
        self.n_params = self.dim + 1

    def param_names(self):
        return ["log_amplitude_var"] + [f"log_ard_weight_{i}" for i in range(self.dim)]

    def __call__(self, theta, X, Y=None):
        amp = np.exp(theta[0])
        w = np.exp(theta[1:])
        if Y is None:
            Xc = np.ascontiguousarray(X)
            return backend.se_ard(Xc, Xc, w, amp)
        return backend.se_ard(X, Y, w, amp)

    def diag(self, theta, X):
        return np.full(X.shape[0], np.exp(theta[0]))

    def gram(self, theta, X, sqdiff):
        """Gram matrix plus a closure mapping W to 0.5 * sum(W * dK/dtheta)."""
        K = self(theta, X)
        w = np.exp(theta[1:])

        def grad(W):
            WK = W * K
            g = np.empty(self.n_params)
            g[0] = 0.5 * WK.sum()
            g[1:] = -0.25 * w * np.einsum("kij,ij->k", sqdiff, WK)
            return g

        return K, grad

    def hyperparams(self, theta, noise_var):
        return GpHyperparams(float(np.exp(theta[0])), np.exp(theta[1:]), float(noise_var))

    def to_dict(self):
        return {"name": self.name, "dim": self.dim}


def cholesky_jitter(K, start=JITTER_START, maximum=JITTER_MAX):
    """Lower Cholesky factor of ``K + jitter*I`` with escalating jitter.

    Returns ``(L, jitter)``. Jitter starts at ``start`` and grows by 10x
    up to ``maximum`` before :class:`NotPositiveDefinite` is raised.
    """
    n = K.shape[0]
    jitter = start
    while jitter <= maximum * (1 + 1e-12):
        A = K + jitter * np.eye(n)
        L, info = lapack.dpotrf(A, lower=1, clean=1)
        if info == 0 and np.all(np.isfinite(L)):
            return L, jitter
        jitter *= 10.0
    raise NotPositiveDefinite(f"Cholesky failed with jitter up to {maximum:g}")


def _lml_core(kernel, theta, log_noise, X, y, sqdiff, with_grad=True):
    n = X.shape[0]
    noise = np.exp(log_noise)
    Kf, grad_fn = kernel.gram(theta, X, sqdiff)
    L, _ = cholesky_jitter(Kf + noise * np.eye(n))
    alpha = linalg.cho_solve((L, True), y, check_finite=False)
    value = -0.5 * y @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * n * LOG_2PI
    if not with_grad:
        return value, None
    Kinv, info = lapack.dpotri(L, lower=1)
    if info != 0:
        raise NotPositiveDefinite("inverse from Cholesky factor failed")
    Kinv = np.tril(Kinv) + np.tril(Kinv, -1).T
    W = np.outer(alpha, alpha) - Kinv
    g = np.empty(kernel.n_params + 1)
    g[:-1] = grad_fn(W)
    g[-1] = 0.5 * noise * np.trace(W)
    return value, g


def log_marginal_likelihood(X, y, hp: GpHyperparams):
    """Log marginal likelihood of raw (unstandardised) data and its gradient.

    The gradient is with respect to ``[log amplitude_var, log w_1, ..., log
    w_d, log noise_var]``. Zero weights have no log; their gradient entry is 0.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[1] != hp.dim:
        raise DimensionMismatch(f"data has {X.shape[1]} columns, kernel {hp.dim}")
    kernel = SEArdKernel(hp.dim)
    with np.errstate(divide="ignore"):
        theta = np.concatenate([[np.log(hp.amplitude_var)], np.log(hp.ard_weights)])
    log_noise = np.log(hp.noise_var) if hp.noise_var > 0 else -np.inf
    value, g = _lml_core(kernel, theta, log_noise, X, y, pairwise_sqdiff(X))
    return float(value), np.nan_to_num(g)


# -- fitting ------------------------------------------------------------------


@dataclass(frozen=True)
class FitConfig:
    """Options for maximum-likelihood fitting."""

    n_restarts: int = 10
    seed: int = 0
    init_range: tuple = (1e-3, 1e3)
    noise_init_range: tuple = (1e-6, 1e-1)
    noise_floor: float = NOISE_FLOOR
    noise_max: float = 10.0
    param_bounds: tuple = (1e-8, 1e6)
    fixed_noise: float | None = None  # 0 fits noiseless data (jitter only)
    max_iter: int = 500
    tie_tol: float = 1e-9
    standardize: bool = True


@dataclass(frozen=True)
class Normalization:
    x_mean: np.ndarray
    x_scale: np.ndarray
    y_mean: float
    y_scale: float

    @classmethod
    def identity(cls, dim):
        return cls(np.zeros(dim), np.ones(dim), 0.0, 1.0)

    @classmethod
    def from_data(cls, X, y):
        x_mean = X.mean(axis=0)
        x_scale = X.std(axis=0)
        x_scale = np.where(x_scale > 0, x_scale, 1.0)
        y_mean = float(y.mean())
        y_scale = float(y.std())
        return cls(x_mean, x_scale, y_mean, y_scale if y_scale > 0 else 1.0)

    def x(self, X):
        return (X - self.x_mean) / self.x_scale

    def to_dict(self):
        return {
            "x_mean": self.x_mean,
            "x_scale": self.x_scale,
            "y_mean": self.y_mean,
            "y_scale": self.y_scale,
        }


@dataclass(frozen=True, eq=False)
class GpModel:
    """A fitted GP. All arrays are stored in standardised units."""

    kernel: object
    theta: np.ndarray
    noise_var: float
    training_inputs: np.ndarray
    training_outputs: np.ndarray
    chol_factor: np.ndarray
    alpha: np.ndarray
    normalization: Normalization
    jitter: float = JITTER_START
    degenerate: bool = False
    fit_info: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("theta", "training_inputs", "training_outputs", "chol_factor", "alpha"):
            getattr(self, name).setflags(write=False)

    @property
    def input_dim(self):
        return self.training_inputs.shape[1]

    @property
    def n_train(self):
        return self.training_inputs.shape[0]

    @property
    def hyperparams(self):
        return self.kernel.hyperparams(self.theta, self.noise_var)

    def predict(self, X_star, include_noise=True):
        return predict(self, X_star, include_noise=include_noise)

    def predict_normalized(self, Z, include_noise=True):
        """Posterior mean/variance for already-standardised inputs ``Z``."""
        if self.degenerate:
            m = np.zeros(Z.shape[0])
            v = np.full(Z.shape[0], self.noise_var if include_noise else 0.0)
            return m, v
        Ks = self.kernel(self.theta, self.training_inputs, Z)
        mean = Ks.T @ self.alpha
        V = linalg.solve_triangular(self.chol_factor, Ks, lower=True, check_finite=False)
        var = self.kernel.diag(self.theta, Z) - np.einsum("ij,ij->j", V, V)
        if include_noise:
            var = var + self.noise_var
        return mean, _clamp_variance(var)


def _clamp_variance(var):
    if np.any(var < -1e-10):
        warnings.warn(f"clamping negative posterior variance (min {var.min():.3e})", RuntimeWarning)
    return np.maximum(var, 0.0)


def predict(model: GpModel, X_star, include_noise=True):
    """Posterior mean and marginal variance at ``X_star`` in data units.

    With ``include_noise`` the variance is that of a new observation; without
    it, of the latent function.
    """
    X_star = np.atleast_2d(np.asarray(X_star, dtype=float))
    if X_star.shape[1] != model.input_dim:
        raise DimensionMismatch(f"model expects {model.input_dim} columns, got {X_star.shape[1]}")
    nz = model.normalization
    m, v = model.predict_normalized(nz.x(X_star), include_noise=include_noise)
    return m * nz.y_scale + nz.y_mean, v * nz.y_scale**2


def _restart_starts(kernel, config, rng):
    lo, hi = np.log(config.init_range[0]), np.log(config.init_range[1])
    nlo, nhi = np.log(config.noise_init_range[0]), np.log(config.noise_init_range[1])
    for _ in range(config.n_restarts):
        theta = rng.uniform(lo, hi, size=kernel.n_params)
        log_noise = rng.uniform(nlo, nhi)
        yield theta, log_noise


def _optimize(kernel, X, y, config):
    """Multi-start L-BFGS-B on the negative log marginal likelihood.

    Returns ``(theta, log_noise, lml, info)`` of the best restart.
    """
    sqdiff = pairwise_sqdiff(X)
    learn_noise = config.fixed_noise is None
    lo, hi = np.log(config.param_bounds[0]), np.log(config.param_bounds[1])
    bounds = [(lo, hi)] * kernel.n_params
    if learn_noise:
        bounds.append((np.log(config.noise_floor), np.log(config.noise_max)))
        fixed_log_noise = None
    else:
        # the floor guards learned noise; a fixed value (0 for noiseless data) is taken as given
        fixed_log_noise = np.log(config.fixed_noise) if config.fixed_noise > 0 else -np.inf

    def objective(z):
        theta = z[: kernel.n_params]
        log_noise = z[-1] if learn_noise else fixed_log_noise
        try:
            value, g = _lml_core(kernel, theta, log_noise, X, y, sqdiff)
        except (NotPositiveDefinite, linalg.LinAlgError, FloatingPointError):
            return 1e20, np.zeros_like(z)
        if not np.isfinite(value):
            return 1e20, np.zeros_like(z)
        grad = g if learn_noise else g[:-1]
        return -value, -grad

    rng = np.random.default_rng(config.seed)
    results = []
    failures = []
    for k, (theta0, log_noise0) in enumerate(_restart_starts(kernel, config, rng)):
        z0 = np.concatenate([theta0, [log_noise0]]) if learn_noise else theta0
        z0 = np.clip(z0, [b[0] for b in bounds], [b[1] for b in bounds])
        try:
            res = optimize.minimize(
                objective, z0, jac=True, method="L-BFGS-B", bounds=bounds,
                options={"maxiter": config.max_iter},
            )
        except (ValueError, ArithmeticError) as exc:
            failures.append(f"restart {k}: {exc}")
            continue
        if not np.isfinite(res.fun) or res.fun >= 1e20:
            failures.append(f"restart {k}: {res.message}")
            continue
        results.append((-float(res.fun), float(np.linalg.norm(res.x)), k, res))
    if not results:
        raise FitFailure("every restart failed: " + "; ".join(failures))
    best_lml = max(r[0] for r in results)
    tied = [r for r in results if r[0] >= best_lml - config.tie_tol * max(1.0, abs(best_lml))]
    lml, _, k, res = min(tied, key=lambda r: (r[1], r[2]))
    theta = res.x[: kernel.n_params]
    log_noise = res.x[-1] if learn_noise else fixed_log_noise
    info = {
        "restart": k,
        "n_restarts": config.n_restarts,
        "n_failed": len(failures),
        "log_marginal_likelihood": lml,
        "optimizer_dim": int(res.x.size),
        "n_kernel_params": kernel.n_params,
        "converged": bool(res.success),
        "n_iter": int(res.nit),
    }
    return theta, log_noise, lml, info


def _direct_weights(K, t, fallback):
    # symmetric indefinite solve of the unjittered system; backward stable even
    # when K is numerically singular, so the training residual stays tiny
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", linalg.LinAlgWarning)
            alpha = linalg.solve(K, t, assume_a="sym", check_finite=False)
    except linalg.LinAlgError:
        return fallback
    return alpha if np.all(np.isfinite(alpha)) else fallback


def refine_weights(K, L, t, alpha, max_iter=200, rtol=1e-12):
    """Iteratively refine ``alpha`` towards a solution of ``K alpha = t``.

    ``L`` factors ``K + jitter*I``. A noiseless fit solved with that factor
    alone misses its training outputs by ``jitter * alpha``; using the
    factor as a preconditioner for the unjittered system removes that bias.
    The iterate with the smallest residual is returned.
    """
    tol = rtol * max(1.0, float(np.max(np.abs(t))))
    best, best_norm = alpha, np.inf
    for _ in range(max_iter):
        r = t - K @ alpha
        norm = float(np.max(np.abs(r)))
        if norm < best_norm:
            best, best_norm = alpha, norm
        if norm <= tol:
            break
        alpha = alpha + linalg.cho_solve((L, True), r, check_finite=False)
    return best


def build_model(kernel, theta, noise_var, Z, t, normalization, degenerate=False, fit_info=None):
    """Assemble a :class:`GpModel` from standardised data and hyperparameters."""
    Z = np.array(Z, dtype=float)
    t = np.array(t, dtype=float)
    theta = np.array(theta, dtype=float)
    n = Z.shape[0]
    if degenerate:
        L = np.zeros((n, n))
        alpha = np.zeros(n)
        jitter = 0.0
    else:
        K = kernel(theta, Z) + noise_var * np.eye(n)
        L, jitter = cholesky_jitter(K)
        alpha = linalg.cho_solve((L, True), t, check_finite=False)
        if noise_var == 0.0:
            alpha = refine_weights(K, L, t, _direct_weights(K, t, alpha))
    return GpModel(
        kernel=kernel,
        theta=theta,
        noise_var=float(noise_var),
        training_inputs=Z,
        training_outputs=t,
        chol_factor=np.ascontiguousarray(L),
        alpha=alpha,
        normalization=normalization,
        jitter=jitter,
        degenerate=degenerate,
        fit_info=dict(fit_info or {}),
    )


def fit_with_kernel(kernel, X, y, config: FitConfig | None = None):
    """Fit ``kernel`` to arrays ``X`` (n, d) and ``y`` (n,) by maximum likelihood."""
    config = config or FitConfig()
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] < 2:
        raise DegenerateData("at least two training rows are required")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise DegenerateData("training data must be finite")
    if config.standardize:
        nz = Normalization.from_data(X, y)
    else:
        nz = Normalization.identity(X.shape[1])
    Z = nz.x(X)
    t = (y - nz.y_mean) / nz.y_scale
    if np.ptp(y) == 0.0:
        warnings.warn("outputs are constant; returning a constant-mean model", RuntimeWarning)
        theta = np.zeros(kernel.n_params)
        info = {"reason": "constant outputs", "n_kernel_params": kernel.n_params}
        return build_model(kernel, theta, config.noise_floor, Z, t, nz, degenerate=True, fit_info=info)
    theta, log_noise, _, info = _optimize(kernel, Z, t, config)
    return build_model(kernel, theta, np.exp(log_noise), Z, t, nz, fit_info=info)


def fit_gp(data, config: FitConfig | None = None) -> GpModel:
    """Fit an SE-ARD GP to a :class:`FidelityDataset` or an ``(X, y)`` pair.

    Datasets are passed through :meth:`FidelityDataset.features`, so direction
    columns arrive at the model as (sin, cos) pairs.
    """
    if isinstance(data, FidelityDataset):
        X, y = data.features(), data.outputs
    else:
        X, y = data
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
    return fit_with_kernel(SEArdKernel(X.shape[1]), X, y, config)
