"""Reduced-order representation of the cage deformation field.

The data matrix M stacks node displacements row-wise as x1, y1, z1, ...,
xN, yN, zN and time steps of all scenarios column-wise. Principal directions
are the eigenvectors of M M^T (uncentred), obtained through a thin SVD of M.
Coefficients are ``B = phi_k^T M`` per time step; their per-scenario means
reconstruct the average deformation as ``sum_j phi_j * b_j``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import (
    AllZeroVariance,
    DimensionMismatch,
    EmptyScenario,
    InconsistentNodeCount,
    NumericalFailure,
)

TRANSIENT_FRACTION = 0.2


@dataclass(frozen=True, eq=False)
class DisplacementMatrix:
    values: np.ndarray  # (3N, t_n)
    scenario_index: np.ndarray  # (t_n,), 1-based, nondecreasing
    node_count: int

    def __post_init__(self):
        if self.values.shape[0] != 3 * self.node_count:
            raise InconsistentNodeCount(f"{self.values.shape[0]} rows for {self.node_count} nodes")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("displacement matrix has non-finite entries")
        idx = self.scenario_index
        if idx.size != self.values.shape[1]:
            raise DimensionMismatch("scenario_index length differs from column count")
        if idx.size and (idx[0] != 1 or np.any(np.diff(idx) < 0) or np.any(np.diff(idx) > 1)):
            raise ValueError("scenario_index must be nondecreasing and cover 1..s contiguously")

    @property
    def total_steps(self):
        return self.values.shape[1]

    @property
    def n_scenarios(self):
        return int(self.scenario_index[-1]) if self.scenario_index.size else 0


@dataclass(frozen=True, eq=False)
class PcaBasis:
    eigenvectors: np.ndarray  # (3N, c)
    eigenvalues: np.ndarray  # (c,)
    retained: int | None = None
    threshold: float | None = None
    centered: bool = False
    center: np.ndarray | None = None
    transient_fraction: float = TRANSIENT_FRACTION

    @property
    def total_components(self):
        return self.eigenvalues.size

    @property
    def phi(self):
        """Retained eigenvectors (all of them while ``retained`` is unset)."""
        k = self.total_components if self.retained is None else self.retained
        return self.eigenvectors[:, :k]

    def with_threshold(self, threshold):
        k = select_components(self.eigenvalues, threshold)
        return PcaBasis(self.eigenvectors, self.eigenvalues, k, threshold, self.centered,
                        self.center, self.transient_fraction)

    def with_retained(self, k):
        return PcaBasis(self.eigenvectors, self.eigenvalues, int(k), self.threshold, self.centered,
                        self.center, self.transient_fraction)

    def explained(self):
        """Cumulative explained-variance ratio for k = 1..c."""
        return np.cumsum(self.eigenvalues) / np.sum(self.eigenvalues)


@dataclass(frozen=True, eq=False)
class CoefficientMatrix:
    coefficients: np.ndarray
    kind: str  # "per-step" or "per-scenario"


def drop_transient(series, fraction=TRANSIENT_FRACTION):
    """Drop the leading ``fraction`` of time steps of a (T, ...) series."""
    series = np.asarray(series)
    n_drop = int(np.floor(fraction * series.shape[0]))
    if series.shape[0] - n_drop < 1:
        raise EmptyScenario("no time steps left after the transient cut")
    return series[n_drop:]


def assemble_data_matrix(scenarios) -> DisplacementMatrix:
    """Stack per-scenario node time series into M.

    ``scenarios`` is a sequence of arrays shaped (T_s, N, 3): retained time
    steps of node displacements. Columns are scenario-major, then time.
    """
    scenarios = list(scenarios)
    if not scenarios:
        raise EmptyScenario("no scenarios given")
    node_count = None
    cols = []
    index = []
    for h, series in enumerate(scenarios, start=1):
        series = np.asarray(series, dtype=float)
        if series.ndim != 3 or series.shape[2] != 3:
            raise DimensionMismatch(f"scenario {h}: expected (T, N, 3), got {series.shape}")
        if series.shape[0] == 0:
            raise EmptyScenario(f"scenario {h} has no time steps")
        if node_count is None:
            node_count = series.shape[1]
        elif series.shape[1] != node_count:
            raise InconsistentNodeCount(f"scenario {h} has {series.shape[1]} nodes, expected {node_count}")
        cols.append(series.reshape(series.shape[0], -1).T)
        index.append(np.full(series.shape[0], h))
    return DisplacementMatrix(np.hstack(cols), np.concatenate(index), node_count)


def eigen_decompose(M, centered=False) -> PcaBasis:
    """Eigenpairs of M M^T via thin SVD, sorted descending, sign-fixed.

    Each eigenvector's largest-magnitude entry is made positive.
    """
    values = M.values if isinstance(M, DisplacementMatrix) else np.asarray(M, dtype=float)
    if values.shape[1] < 1:
        raise EmptyScenario("matrix has no columns")
    center = None
    if centered:
        center = values.mean(axis=1)
        values = values - center[:, None]
    try:
        U, s, _ = linalg.svd(values, full_matrices=False, lapack_driver="gesdd")
    except linalg.LinAlgError:
        try:
            U, s, _ = linalg.svd(values, full_matrices=False, lapack_driver="gesvd")
        except linalg.LinAlgError as exc:
            raise NumericalFailure(f"SVD did not converge: {exc}") from exc
    lam = s * s
    order = np.argsort(-lam, kind="stable")
    U = U[:, order]
    lam = lam[order]
    pivot = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[pivot, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    U = U * signs
    return PcaBasis(np.ascontiguousarray(U), lam, centered=centered, center=center)


def select_components(lambdas, threshold) -> int:
    """Smallest k whose cumulative explained variance reaches ``threshold``."""
    lam = np.asarray(lambdas, dtype=float)
    if not 0.0 < threshold <= 1.0:
        raise ValueError("threshold must lie in (0, 1]")
    total = lam.sum()
    if not total > 0:
        raise AllZeroVariance("all eigenvalues are zero")
    ratio = np.cumsum(lam) / total
    # absorb rounding in the cumulative sum so that e.g. 9/10 meets 0.90
    k = int(np.searchsorted(ratio, threshold - 1e-12, side="left")) + 1
    return min(k, lam.size)


def project(M, basis: PcaBasis) -> CoefficientMatrix:
    """B = phi_k^T M, one column per time step."""
    values = M.values if isinstance(M, DisplacementMatrix) else np.asarray(M, dtype=float)
    phi = basis.phi
    if values.shape[0] != phi.shape[0]:
        raise DimensionMismatch(f"basis has {phi.shape[0]} rows, data {values.shape[0]}")
    if basis.centered:
        values = values - basis.center[:, None]
    return CoefficientMatrix(phi.T @ values, "per-step")


def mean_coefficients(B: CoefficientMatrix, scenario_index) -> CoefficientMatrix:
    """Column h of the result is the mean of B's columns from scenario h."""
    coeffs = B.coefficients if isinstance(B, CoefficientMatrix) else np.asarray(B, dtype=float)
    idx = np.asarray(scenario_index)
    if idx.size != coeffs.shape[1]:
        raise DimensionMismatch("scenario_index must align with coefficient columns")
    s = int(idx.max()) if idx.size else 0
    out = np.empty((coeffs.shape[0], s))
    for h in range(1, s + 1):
        mask = idx == h
        if not np.any(mask):
            raise EmptyScenario(f"scenario {h} has no columns")
        out[:, h - 1] = coeffs[:, mask].mean(axis=1)
    return CoefficientMatrix(out, "per-scenario")


def reconstruct(coeffs, basis: PcaBasis):
    """sum_j phi_j * b_j for one coefficient vector (k,) or many (k, s)."""
    b = np.asarray(coeffs, dtype=float)
    phi = basis.phi
    if b.shape[0] != phi.shape[1]:
        raise DimensionMismatch(f"expected {phi.shape[1]} coefficients, got {b.shape[0]}")
    out = phi @ b
    if basis.centered:
        out = out + (basis.center if b.ndim == 1 else basis.center[:, None])
    return out


def to_nodes(column):
    """Reshape a 3N-vector (x1, y1, z1, ...) into an (N, 3) array."""
    return np.asarray(column).reshape(-1, 3)


def truncation_residual(M, basis: PcaBasis, k):
    """Squared Frobenius norm of M minus its rank-k reconstruction."""
    values = M.values if isinstance(M, DisplacementMatrix) else np.asarray(M, dtype=float)
    phi = basis.eigenvectors[:, :k]
    R = values - phi @ (phi.T @ values)
    return float(np.sum(R * R))
