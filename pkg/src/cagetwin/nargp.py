"""Nonlinear autoregressive multi-fidelity GP regression.

Level 1 is an ordinary GP on the lowest-fidelity data. Every level t >= 2
is a GP over the augmented input ``u = (x, f_{t-1}(x))`` where the extra
column is the posterior mean of the level below, with covariance

    k(u, u') = k_rho(x, x') * k_f(f, f') + k_delta(x, x')

All three factors are SE-ARD; the amplitude of ``k_f`` is pinned to 1, so a
level has 2d + 3 free kernel hyperparameters plus the noise variance.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial import cKDTree

from . import backend
from .errors import (
    DimensionMismatch,
    EmptyLevel,
    FitFailure,
    InvalidSampleCount,
    LevelOrderError,
    NestedViolation,
)
from .gp import (
    FidelityDataset,
    FitConfig,
    GpHyperparams,
    fit_gp,
    fit_with_kernel,
)


@dataclass(frozen=True)
class NargpHyperparams:
    theta_rho: GpHyperparams
    theta_f: float
    theta_delta: GpHyperparams
    noise_var: float

    @property
    def dim(self):
        return self.theta_rho.dim

    @property
    def n_free(self):
        """Free kernel hyperparameters, noise excluded."""
        return 2 * self.dim + 3


class NargpKernel:
    """Composite covariance over ``(x, f)``.

    ``theta = [log s_rho, log w_rho (d), log w_f, log s_delta, log w_delta (d)]``.
    """

    name = "nargp"

    def __init__(self, dim):
        self.dim = int(dim)
        self.n_params = 2 * self.dim + 3

    def param_names(self):
        d = self.dim
        return (
            ["log_rho_var"]
            + [f"log_rho_weight_{i}" for i in range(d)]
            + ["log_f_weight", "log_delta_var"]
            + [f"log_delta_weight_{i}" for i in range(d)]
        )

    def split(self, theta):
        d = self.dim
        e = np.exp(theta)
        return e[0], e[1 : d + 1], e[d + 1], e[d + 2], e[d + 3 :]

    def _parts(self, theta, X, Y):
        d = self.dim
        s_rho, w_rho, w_f, s_delta, w_delta = self.split(theta)
        same = Y is None
        Xx = np.ascontiguousarray(X[:, :d])
        Xf = np.ascontiguousarray(X[:, d:])
        Yx = Xx if same else np.ascontiguousarray(Y[:, :d])
        Yf = Xf if same else np.ascontiguousarray(Y[:, d:])
        k_rho = backend.se_ard(Xx, Yx, w_rho, s_rho)
        k_f = backend.se_ard(Xf, Yf, np.atleast_1d(w_f), 1.0)
        k_delta = backend.se_ard(Xx, Yx, w_delta, s_delta)
        return k_rho, k_f, k_delta

    def __call__(self, theta, X, Y=None):
        k_rho, k_f, k_delta = self._parts(theta, X, Y)
        return k_rho * k_f + k_delta

    def diag(self, theta, X):
        s_rho, _, _, s_delta, _ = self.split(theta)
        return np.full(X.shape[0], s_rho + s_delta)

    def gram(self, theta, X, sqdiff):
        d = self.dim
        k_rho, k_f, k_delta = self._parts(theta, X, None)
        prod = k_rho * k_f
        K = prod + k_delta
        _, w_rho, w_f, _, w_delta = self.split(theta)

        def grad(W):
            P = W * prod
            Q = W * k_delta
            g = np.empty(self.n_params)
            g[0] = 0.5 * P.sum()
            g[1 : d + 1] = -0.25 * w_rho * np.einsum("kij,ij->k", sqdiff[:d], P)
            g[d + 1] = -0.25 * w_f * np.sum(sqdiff[d] * P)
            g[d + 2] = 0.5 * Q.sum()
            g[d + 3 :] = -0.25 * w_delta * np.einsum("kij,ij->k", sqdiff[:d], Q)
            return g

        return K, grad

    def hyperparams(self, theta, noise_var):
        s_rho, w_rho, w_f, s_delta, w_delta = self.split(theta)
        return NargpHyperparams(
            theta_rho=GpHyperparams(float(s_rho), w_rho, float(noise_var)),
            theta_f=float(w_f),
            theta_delta=GpHyperparams(float(s_delta), w_delta, float(noise_var)),
            noise_var=float(noise_var),
        )

    def to_dict(self):
        return {"name": self.name, "dim": self.dim}


def composite_kernel(u, u_prime, hp: NargpHyperparams) -> float:
    """Composite NARGP covariance between two augmented points of length d+1."""
    u = np.asarray(u, dtype=float).ravel()
    up = np.asarray(u_prime, dtype=float).ravel()
    d = hp.dim
    if u.size != d + 1 or up.size != d + 1:
        raise DimensionMismatch(f"augmented points must have length {d + 1}")
    dx = u[:d] - up[:d]
    df = u[d] - up[d]
    k_rho = hp.theta_rho.amplitude_var * np.exp(-0.5 * np.sum(hp.theta_rho.ard_weights * dx * dx))
    k_f = np.exp(-0.5 * hp.theta_f * df * df)
    k_delta = hp.theta_delta.amplitude_var * np.exp(-0.5 * np.sum(hp.theta_delta.ard_weights * dx * dx))
    return float(k_rho * k_f + k_delta)


class DeterministicLevel:
    """Wrap a known function as a zero-variance lower level."""

    def __init__(self, fn, input_dim):
        self.fn = fn
        self.input_dim = int(input_dim)

    def predict(self, X, include_noise=True):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.input_dim:
            raise DimensionMismatch(f"expected {self.input_dim} columns, got {X.shape[1]}")
        mean = np.asarray(self.fn(X), dtype=float).ravel()
        return mean, np.zeros_like(mean)


@dataclass(frozen=True)
class NestedReport:
    ok: bool
    note: str = ""


def _check_levels(datasets, first_level=1):
    for k, ds in enumerate(datasets):
        if ds.level != first_level + k:
            raise LevelOrderError(
                f"dataset at position {k} has level {ds.level}, expected {first_level + k}; "
                "levels must be passed in increasing fidelity order"
            )
        if ds.n < 2:
            raise EmptyLevel(f"level {ds.level} has {ds.n} rows; at least 2 are required")


def validate_nested(datasets, mode="raw", tol=1e-9) -> NestedReport:
    """Check that each level's inputs are a subset of the level below.

    Comparison happens on standardised features (level-1 constants), within
    ``tol``. In ``mode="surrogate"`` the lower level is an everywhere
    evaluable model and the check only reports that fact.
    """
    datasets = list(datasets)
    if not datasets:
        raise EmptyLevel("no datasets given")
    first = datasets[0].level
    _check_levels(datasets, first)
    if mode == "surrogate":
        return NestedReport(True, "lower level is a surrogate; nesting holds by construction")
    if mode != "raw":
        raise ValueError(f"unknown mode {mode!r}")
    base = datasets[0].features()
    mu = base.mean(axis=0)
    sd = base.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    offending = []
    for lower, upper in zip(datasets[:-1], datasets[1:]):
        tree = cKDTree((lower.features() - mu) / sd)
        dist, _ = tree.query((upper.features() - mu) / sd)
        for row in np.flatnonzero(dist > tol):
            offending.append((upper.level, int(row)))
    if offending:
        desc = ", ".join(f"level {lvl} row {row}" for lvl, row in offending[:10])
        raise NestedViolation(f"inputs not contained in the level below: {desc}", offending)
    return NestedReport(True)


@dataclass(frozen=True)
class NargpConfig:
    fit: FitConfig = field(default_factory=FitConfig)
    mode: str = "raw"  # or "surrogate"

    def level_fit(self, level):
        if level == 1:
            return self.fit
        return replace(self.fit, seed=self.fit.seed + level - 1)


@dataclass(frozen=True, eq=False)
class NargpModel:
    levels: tuple
    input_dim: int
    augmented_inputs: tuple = ()
    lower_ref: str | None = None

    @property
    def num_levels(self):
        return len(self.levels)

    def predict(self, X, **kw):
        return predict_nargp(self, X, **kw)


def _augment(X, f):
    return np.column_stack([X, np.asarray(f, dtype=float).ravel()])


def fit_nargp(datasets, config: NargpConfig | None = None, lower=None, lower_ref=None) -> NargpModel:
    """Train the recursion level by level.

    ``datasets`` are ordered by increasing fidelity. When ``lower`` is given
    it serves as level 1 (anything with ``predict(X, include_noise)``) and
    ``datasets`` start at level 2.
    """
    config = config or NargpConfig()
    datasets = list(datasets)
    if lower is None:
        validate_nested(datasets, mode=config.mode)
        if not datasets:
            raise EmptyLevel("no datasets given")
        base = fit_gp(datasets[0], config.level_fit(1))
        levels = [base]
        upper = datasets[1:]
    else:
        _check_levels(datasets, 2)
        levels = [lower]
        upper = datasets
    input_dim = upper[0].features().shape[1] if upper else levels[0].input_dim
    augmented = []
    for ds in upper:
        X = ds.features()
        if X.shape[1] != input_dim:
            raise DimensionMismatch(f"level {ds.level} has {X.shape[1]} features, expected {input_dim}")
        partial = NargpModel(tuple(levels), input_dim)
        f_prev, _ = predict_nargp(partial, X)
        U = _augment(X, f_prev)
        try:
            model = fit_with_kernel(NargpKernel(input_dim), U, ds.outputs, config.level_fit(ds.level))
        except FitFailure as exc:
            raise FitFailure(str(exc), level=ds.level) from exc
        augmented.append(U)
        levels.append(model)
    return NargpModel(tuple(levels), input_dim, tuple(augmented), lower_ref)


def predict_nargp(model: NargpModel, X_star, mode="mean", n_samples=None, seed=None, include_noise=True):
    """Propagate predictions up the recursion.

    ``mode="mean"`` feeds each level's posterior mean to the next and reports
    the top level's conditional variance. ``mode="mc"`` draws ``n_samples``
    latent samples per query point at each lower level and reports the
    sample mean and total variance.
    """
    X = np.atleast_2d(np.asarray(X_star, dtype=float))
    if X.shape[1] != model.input_dim:
        raise DimensionMismatch(f"model expects {model.input_dim} columns, got {X.shape[1]}")
    top = model.num_levels - 1
    if mode == "mean":
        mean, var = model.levels[0].predict(X, include_noise=include_noise)
        for t in range(1, model.num_levels):
            mean, var = model.levels[t].predict(_augment(X, mean), include_noise=include_noise)
        return mean, var
    if mode != "mc":
        raise ValueError(f"unknown prediction mode {mode!r}")
    if n_samples is None or n_samples < 2:
        raise InvalidSampleCount(f"monte-carlo mode needs at least 2 samples, got {n_samples}")
    if top == 0:
        return model.levels[0].predict(X, include_noise=include_noise)
    rng = np.random.default_rng(seed)
    m = X.shape[0]
    mean, var = model.levels[0].predict(X, include_noise=False)
    samples = mean[None, :] + np.sqrt(var)[None, :] * rng.standard_normal((n_samples, m))
    Xrep = np.tile(X, (n_samples, 1))
    for t in range(1, model.num_levels):
        last = t == top
        mt, vt = model.levels[t].predict(_augment(Xrep, samples.ravel()), include_noise=include_noise and last)
        mt = mt.reshape(n_samples, m)
        vt = vt.reshape(n_samples, m)
        if last:
            return mt.mean(axis=0), vt.mean(axis=0) + mt.var(axis=0)
        samples = mt + np.sqrt(vt) * rng.standard_normal((n_samples, m))
    raise AssertionError("unreachable")
