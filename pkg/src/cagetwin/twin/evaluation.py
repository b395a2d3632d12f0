"""Accuracy metrics and plot-ready density tables."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import EmptyDataset, LengthMismatch

DEFAULT_BINS = 60


@dataclass(frozen=True, eq=False)
class EvalReport:
    names: tuple
    mae: np.ndarray  # (q,)
    slope: np.ndarray  # (q,), least-squares fit of prediction on truth
    intercept: np.ndarray  # (q,)
    count: int
    density: np.ndarray  # (q, bins, bins): rows index truth bins, columns prediction bins
    edges: np.ndarray  # (q, bins + 1), shared by both axes

    def row(self, name):
        q = self.names.index(name)
        return {"quantity": name, "mae": float(self.mae[q]), "slope": float(self.slope[q]),
                "intercept": float(self.intercept[q]), "count": self.count}

    def table(self):
        return [self.row(n) for n in self.names]

    def format_table(self):
        lines = [f"{'quantity':<16}{'MAE':>14}{'slope':>10}{'intercept':>12}{'n':>7}"]
        for r in self.table():
            lines.append(f"{r['quantity']:<16}{r['mae']:>14.6g}{r['slope']:>10.4f}{r['intercept']:>12.4g}{r['count']:>7d}")
        return "\n".join(lines)


def best_fit(truth, pred):
    """Slope and intercept of the least-squares line ``pred = a * truth + b``.

    Both are NaN when the truth values do not vary.
    """
    t = np.asarray(truth, dtype=float)
    p = np.asarray(pred, dtype=float)
    dt = t - t.mean()
    sxx = float(dt @ dt)
    if sxx == 0.0:
        return float("nan"), float("nan")
    slope = float(dt @ (p - p.mean())) / sxx
    return slope, float(p.mean() - slope * t.mean())


def density_table(truth, pred, bins=DEFAULT_BINS):
    """Joint histogram over a square grid spanning the min/max of both series."""
    lo = float(min(np.min(truth), np.min(pred)))
    hi = float(max(np.max(truth), np.max(pred)))
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    edges = np.linspace(lo, hi, bins + 1)
    counts, _, _ = np.histogram2d(truth, pred, bins=[edges, edges])
    return counts.astype(np.int64), edges


def evaluate(predictions, truth, names=None, bins=DEFAULT_BINS) -> EvalReport:
    """Compare aligned predictions and truth, one column per quantity."""
    P = np.asarray(predictions, dtype=float)
    T = np.asarray(truth, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    if T.ndim == 1:
        T = T[:, None]
    if P.shape != T.shape:
        raise LengthMismatch(f"predictions {P.shape} and truth {T.shape} are not aligned")
    if P.shape[0] == 0:
        raise EmptyDataset("nothing to evaluate")
    q = P.shape[1]
    names = tuple(names) if names is not None else tuple(f"q{j + 1}" for j in range(q))
    if len(names) != q:
        raise LengthMismatch(f"{len(names)} names for {q} quantities")
    fits = [best_fit(T[:, j], P[:, j]) for j in range(q)]
    tables = [density_table(T[:, j], P[:, j], bins) for j in range(q)]
    return EvalReport(
        names=names,
        mae=np.mean(np.abs(P - T), axis=0),
        slope=np.array([f[0] for f in fits]),
        intercept=np.array([f[1] for f in fits]),
        count=P.shape[0],
        density=np.stack([t[0] for t in tables]),
        edges=np.stack([t[1] for t in tables]),
    )


def per_axis_mae(pred, truth):
    """Per-scenario, per-axis MAE over nodes for (S, N, 3) fields: an (S, 3) array."""
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise LengthMismatch(f"deformations {pred.shape} and {truth.shape} are not aligned")
    return np.mean(np.abs(pred - truth), axis=1)


def write_report(report: EvalReport, directory):
    """Write ``mae.csv`` and one ``density_<name>.csv`` per quantity.

    Density files list bin centres and counts in long format with the
    log10(1 + count) value a colour map would use.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "mae.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["quantity", "mae", "slope", "intercept", "count"])
        w.writeheader()
        for r in report.table():
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    for j, name in enumerate(report.names):
        e = report.edges[j]
        centres = 0.5 * (e[:-1] + e[1:])
        with open(directory / f"density_{name}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["truth", "prediction", "count", "log_count"])
            for a in range(centres.size):
                for b in range(centres.size):
                    c = int(report.density[j, a, b])
                    w.writerow([repr(float(centres[a])), repr(float(centres[b])), c, repr(float(np.log10(1 + c)))])
    return directory
