"""K-means on embedding columns, compactness-based K selection and exemplars."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .domain import TrafficStateMatrix
from .errors import ConfigError, DataError


@dataclass(frozen=True)
class ClusteringConfig:
    K: int = 5
    n_restarts: int = 10
    max_iters: int = 300
    seed: int = 0
    congestion_threshold: float = 0.79
    exemplar_fraction: float = 0.30
    improvement_tol: float = 0.05
    normalize: bool = False

    def __post_init__(self):
        if self.K < 2:
            raise ConfigError("K must be >= 2")
        if self.n_restarts < 1 or self.max_iters < 1:
            raise ConfigError("n_restarts and max_iters must be >= 1")
        if not 0.0 <= self.congestion_threshold <= 1.0:
            raise ConfigError("congestion_threshold must be in [0, 1]")
        if not 0.0 < self.exemplar_fraction <= 1.0:
            raise ConfigError("exemplar_fraction must be in (0, 1]")
        if self.improvement_tol < 0:
            raise ConfigError("improvement_tol must be >= 0")


@dataclass
class ClusterAssignment:
    labels: np.ndarray
    centroids: np.ndarray          # K x dim
    inertia: float
    counts: np.ndarray
    n_iter: int = 0
    inertia_history: list = field(default_factory=list)


def _sq_dists(P, C):
    # |p|^2 - 2 p.c + |c|^2, floored at 0 against cancellation
    d = (P * P).sum(axis=1)[:, None] - 2.0 * P @ C.T + (C * C).sum(axis=1)[None, :]
    return np.maximum(d, 0.0)


def _seed_centroids(P, K, rng):
    m = P.shape[0]
    centers = [int(rng.integers(m))]
    closest = _sq_dists(P, P[centers])[:, 0]
    for _ in range(1, K):
        total = closest.sum()
        if total > 0:
            idx = int(rng.choice(m, p=closest / total))
        else:
            idx = int(rng.integers(m))
        centers.append(idx)
        closest = np.minimum(closest, _sq_dists(P, P[idx:idx + 1])[:, 0])
    return P[centers].copy()


def _repair_empty(P, labels, C, K):
    """Move the point farthest from its centroid into each empty cluster."""
    counts = np.bincount(labels, minlength=K)
    while np.any(counts == 0):
        empty = int(np.flatnonzero(counts == 0)[0])
        d = ((P - C[labels]) ** 2).sum(axis=1)
        d[counts[labels] <= 1] = -1.0      # never empty a donor cluster
        j = int(np.argmax(d))
        counts[labels[j]] -= 1
        labels[j] = empty
        counts[empty] = 1
        C[empty] = P[j]
    return labels


def _centroids(P, labels, K):
    C = np.zeros((K, P.shape[1]))
    np.add.at(C, labels, P)
    return C / np.bincount(labels, minlength=K)[:, None]


def _lloyd(P, K, max_iters, rng):
    C = _seed_centroids(P, K, rng)
    labels = np.argmin(_sq_dists(P, C), axis=1)
    labels = _repair_empty(P, labels, C, K)
    C = _centroids(P, labels, K)
    history = [float(((P - C[labels]) ** 2).sum())]
    it = 0
    for it in range(1, max_iters + 1):
        new = _repair_empty(P, np.argmin(_sq_dists(P, C), axis=1), C, K)
        if np.array_equal(new, labels):
            break
        labels = new
        C = _centroids(P, labels, K)
        history.append(float(((P - C[labels]) ** 2).sum()))
    C = _centroids(P, labels, K)
    return labels, C, history, it


def kmeans(points, config: ClusteringConfig | None = None) -> ClusterAssignment:
    """Lloyd's algorithm with k-means++ seeding on the columns of ``points``.

    Best of ``n_restarts`` by inertia (ties: lowest restart). Restart r
    draws from its own stream seeded by ``(seed, r)``.
    """
    config = config or ClusteringConfig()
    P = np.asarray(points, dtype=float)
    if P.ndim != 2:
        raise DataError("points must be a dim x m matrix")
    P = P.T.copy()
    m, K = P.shape[0], config.K
    if m < K:
        raise DataError(f"{m} points cannot form {K} clusters")
    if not np.all(np.isfinite(P)):
        raise DataError("points contain non-finite values")
    if config.normalize:
        norms = np.linalg.norm(P, axis=1, keepdims=True)
        P = P / np.where(norms > 0, norms, 1.0)

    best = None
    for r in range(config.n_restarts):
        rng = np.random.default_rng([config.seed, r])
        labels, C, history, it = _lloyd(P, K, config.max_iters, rng)
        inertia = history[-1]
        if best is None or inertia < best.inertia:
            best = ClusterAssignment(labels, C, inertia, np.bincount(labels, minlength=K), it, history)
    return best


@dataclass
class CompactnessReport:
    c: float
    variances: np.ndarray
    counts: np.ndarray


def compactness(original_states, labels, n_clusters: int | None = None) -> CompactnessReport:
    """Mean over clusters of the sample variance (squared Euclidean
    deviation, N-1 denominator) of the original observations. Singleton
    clusters contribute 0."""
    X = original_states.values if isinstance(original_states, TrafficStateMatrix) \
        else np.asarray(original_states, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    labels = np.asarray(labels)
    if labels.shape != (X.shape[1],):
        raise DataError("labels must cover every column")
    if labels.size == 0:
        raise DataError("no samples")
    p = int(labels.max()) + 1 if n_clusters is None else int(n_clusters)
    if labels.min() < 0 or labels.max() >= p:
        raise DataError("label out of range")
    variances = np.zeros(p)
    counts = np.bincount(labels, minlength=p)
    if np.any(counts == 0):
        raise DataError("empty cluster")
    for i in range(p):
        if counts[i] < 2:
            continue
        block = X[:, labels == i]
        dev = block - block.mean(axis=1, keepdims=True)
        variances[i] = float(np.vdot(dev, dev)) / (counts[i] - 1)
    return CompactnessReport(float(variances.mean()), variances, counts)


@dataclass
class KSelection:
    candidates: list[int]
    reports: list[CompactnessReport]
    assignments: list[ClusterAssignment]
    recommended: int

    def assignment_for(self, K: int) -> ClusterAssignment:
        return self.assignments[self.candidates.index(K)]


def recommend_k(candidates, values, tol: float = 0.05) -> int:
    """Smallest candidate after which the relative compactness improvement
    drops below ``tol``."""
    for j in range(len(candidates) - 1):
        prev = values[j]
        gain = (prev - values[j + 1]) / prev if prev > 0 else 0.0
        if gain < tol:
            return candidates[j]
    return candidates[-1]


def select_K(original_states, embeddings, candidate_K,
             config: ClusteringConfig | None = None) -> KSelection:
    config = config or ClusteringConfig()
    candidates = [int(k) for k in candidate_K]
    if not candidates:
        raise ConfigError("candidate_K is empty")
    if candidates != sorted(set(candidates)):
        raise ConfigError("candidate_K must be strictly ascending")
    reports, assignments = [], []
    for K in candidates:
        a = kmeans(embeddings, replace(config, K=K))
        assignments.append(a)
        reports.append(compactness(original_states, a.labels, K))
    rec = recommend_k(candidates, [r.c for r in reports], config.improvement_tol)
    return KSelection(candidates, reports, assignments, rec)


@dataclass
class ClusterExemplar:
    cluster_id: int
    values: np.ndarray
    congested: np.ndarray          # link indices below the threshold
    n_selected: int


def extract_exemplar(original_states, labels, cluster_id: int,
                     config: ClusteringConfig | None = None) -> ClusterExemplar:
    """Link-wise mean of the cluster's most congested members.

    Members are ranked by mean traffic index (ties broken on the column
    values themselves, so member order does not matter) and the lowest
    ``exemplar_fraction`` are averaged.
    """
    config = config or ClusteringConfig()
    X = original_states.values if isinstance(original_states, TrafficStateMatrix) \
        else np.asarray(original_states, dtype=float)
    labels = np.asarray(labels)
    members = np.flatnonzero(labels == cluster_id)
    if members.size == 0:
        raise DataError(f"unknown or empty cluster {cluster_id}")
    block = X[:, members]
    means = block.mean(axis=0)
    order = np.lexsort(np.vstack([block[::-1], means[None, :]]))
    n_sel = max(1, int(np.ceil(config.exemplar_fraction * members.size - 1e-9)))
    exemplar = block[:, order[:n_sel]].mean(axis=1)
    congested = np.flatnonzero(exemplar < config.congestion_threshold)
    return ClusterExemplar(int(cluster_id), exemplar, congested, n_sel)


def purity(labels, truth) -> float:
    """Fraction of samples carrying their cluster's majority truth label."""
    labels = np.asarray(labels)
    truth = np.asarray(truth)
    if labels.shape != truth.shape or labels.size == 0:
        raise DataError("labels and truth must be equal-length and non-empty")
    total = 0
    for c in np.unique(labels):
        _, counts = np.unique(truth[labels == c], return_counts=True)
        total += counts.max()
    return total / labels.size


# ---------------------------------------------------------------- file I/O


def write_assignments(path, matrix: TrafficStateMatrix, labels) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["column_index", "sequence_id", "time_step", "cluster"])
        for j, ((seq, t), c) in enumerate(zip(matrix.column_index, np.asarray(labels).tolist())):
            w.writerow([j, seq, t, c])


def read_assignments(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    labels = np.empty(len(rows), dtype=int)
    for r in rows:
        labels[int(r["column_index"])] = int(r["cluster"])
    return labels


def write_compactness(path, selections: dict[str, KSelection]) -> None:
    """One row per (embedding, K); variances ``;``-separated."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["embedding", "K", "c", "variances", "counts"])
        for name, sel in selections.items():
            for K, rep in zip(sel.candidates, sel.reports):
                w.writerow([name, K, repr(rep.c),
                            ";".join(repr(float(v)) for v in rep.variances),
                            ";".join(str(int(c)) for c in rep.counts)])


def write_exemplar(path, exemplar: ClusterExemplar, link_ids) -> None:
    flagged = np.zeros(exemplar.values.shape[0], dtype=bool)
    flagged[exemplar.congested] = True
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["link_id", "exemplar_value", "congested_flag"])
        for lid, v, f in zip(link_ids, exemplar.values.tolist(), flagged.tolist()):
            w.writerow([lid, repr(v), int(f)])
