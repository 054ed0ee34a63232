"""PCA baseline for comparing clusterings against the LPNMF embedding."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .domain import TrafficStateMatrix
from .errors import ConfigError, DataError


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray                # (n,)
    components: np.ndarray          # (n, k), orthonormal columns
    explained_variance: np.ndarray  # (k,), descending
    total_variance: float

    @property
    def k(self) -> int:
        return self.components.shape[1]

    @property
    def explained_fraction(self) -> float:
        if self.total_variance <= 0:
            return 1.0
        return float(self.explained_variance.sum() / self.total_variance)


def _values(X) -> np.ndarray:
    if isinstance(X, TrafficStateMatrix):
        return X.values
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise DataError("X must be a 2-D matrix")
    return X


def fit_pca(X, k: int = 15) -> PcaModel:
    """Top-k principal directions of the columns of X (thin SVD of the
    centered matrix). Component signs are fixed so the largest-magnitude
    entry of each is positive."""
    X = _values(X)
    n, m = X.shape
    if not 1 <= k <= min(n, m):
        raise ConfigError(f"k={k} must be in [1, {min(n, m)}]")
    mean = X.mean(axis=1)
    U, S, _ = np.linalg.svd(X - mean[:, None], full_matrices=False)
    U = U[:, :k].copy()
    pivot = np.argmax(np.abs(U), axis=0)
    U *= np.sign(U[pivot, np.arange(k)])
    var = S ** 2 / max(m - 1, 1)
    return PcaModel(mean, U, var[:k].copy(), float(var.sum()))


def pca_project(model: PcaModel, X) -> np.ndarray:
    """k x m coordinates of the columns of X."""
    X = _values(X)
    if X.shape[0] != model.mean.shape[0]:
        raise DataError(f"X has {X.shape[0]} rows, model expects {model.mean.shape[0]}")
    return model.components.T @ (X - model.mean[:, None])


def write_projections(path, projections: np.ndarray, column_labels) -> None:
    """Same layout as ``V.csv``: one row per component, one column per sample."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["component"] + list(column_labels))
        for i, row in enumerate(projections.tolist()):
            w.writerow([f"pc_{i}"] + [repr(v) for v in row])
