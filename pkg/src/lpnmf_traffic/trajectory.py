"""Per-sequence trajectories in the embedding space and their clustering.

The distance between two trajectories is one minus the mean, over time
steps, of the cosine similarity of their step-aligned points. Clustering
uses k-medoids (PAM swap search) on the pairwise distance matrix, so no
mean trajectory is ever needed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .domain import Scenario, SequenceManifest, TrafficStateMatrix
from .errors import ConfigError, DataError


class DegenerateTrajectoryError(DataError):
    """A trajectory point has zero norm, so its direction is undefined."""


@dataclass(frozen=True)
class Trajectory:
    sequence_id: str
    points: np.ndarray              # T x s
    scenario: Scenario | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2:
            raise DataError("trajectory points must be a T x s array")
        if np.any(pts < 0):
            raise DataError(f"trajectory {self.sequence_id!r} has negative coordinates")
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return self.points.shape[0]


def build_trajectories(V, matrix: TrafficStateMatrix, manifest: SequenceManifest) -> list[Trajectory]:
    """Split the s x m embedding into one trajectory per manifest sequence."""
    V = np.asarray(V, dtype=float)
    if V.shape[1] != matrix.m:
        raise DataError("embedding width does not match the state matrix")
    out = []
    for seq in manifest.sequences:
        start, stop = matrix.span(seq.id)
        if stop - start != manifest.n_steps:
            raise DataError(f"sequence {seq.id!r} has {stop - start} steps, expected {manifest.n_steps}")
        out.append(Trajectory(seq.id, V[:, start:stop].T, seq.scenario))
    return out


def _unit_points(points: np.ndarray, name: str) -> np.ndarray:
    norms = np.linalg.norm(points, axis=1)
    if np.any(norms == 0):
        step = int(np.flatnonzero(norms == 0)[0])
        raise DegenerateTrajectoryError(f"trajectory {name!r} has a zero-norm point at step {step}")
    return points / norms[:, None]


def trajectory_distance(a: Trajectory, b: Trajectory) -> float:
    if a.points.shape != b.points.shape:
        raise DataError(f"trajectory shape mismatch: {a.points.shape} vs {b.points.shape}")
    ua = _unit_points(a.points, a.sequence_id)
    ub = _unit_points(b.points, b.sequence_id)
    cos = np.einsum("ij,ij->i", ua, ub)
    return float(np.clip(np.mean(1.0 - cos), 0.0, 1.0))


def distance_matrix(trajectories: list[Trajectory]) -> np.ndarray:
    """Symmetric N x N matrix of trajectory distances with zero diagonal."""
    if not trajectories:
        raise DataError("no trajectories")
    shape = trajectories[0].points.shape
    for t in trajectories:
        if t.points.shape != shape:
            raise DataError(f"trajectory {t.sequence_id!r} has shape {t.points.shape}, expected {shape}")
    U = np.stack([_unit_points(t.points, t.sequence_id) for t in trajectories])   # N x T x s
    N, T, _ = U.shape
    flat = U.reshape(N, -1)
    D = np.clip(1.0 - (flat @ flat.T) / T, 0.0, 1.0)
    iu = np.triu_indices(N, 1)
    D.T[iu] = D[iu]
    np.fill_diagonal(D, 0.0)
    return D


@dataclass(frozen=True)
class TrajectoryConfig:
    K: int = 3
    n_restarts: int = 10
    max_iters: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.K < 1 or self.n_restarts < 1 or self.max_iters < 1:
            raise ConfigError("K, n_restarts and max_iters must be >= 1")


@dataclass
class TrajectoryClustering:
    labels: np.ndarray
    medoids: np.ndarray            # indices into the trajectory list, one per cluster
    medoid_ids: list[str]
    total_distance: float
    curves: np.ndarray | None = None     # K x n_steps
    cost_history: list = field(default_factory=list)


def _cost(D, medoids):
    return float(D[:, medoids].min(axis=1).sum())


def _build(D, K):
    """Greedy PAM initialisation."""
    N = D.shape[0]
    medoids = [int(np.argmin(D.sum(axis=1)))]
    nearest = D[:, medoids[0]].copy()
    for _ in range(1, K):
        gains = np.maximum(nearest[:, None] - D, 0.0).sum(axis=0)
        gains[medoids] = -1.0
        j = int(np.argmax(gains))
        medoids.append(j)
        nearest = np.minimum(nearest, D[:, j])
    return np.array(medoids)


def _random_init(D, K, rng):
    # k-means++ style: distance-weighted sampling
    N = D.shape[0]
    medoids = [int(rng.integers(N))]
    nearest = D[:, medoids[0]].copy()
    for _ in range(1, K):
        w = nearest.copy()
        w[medoids] = 0.0
        if w.sum() > 0:
            j = int(rng.choice(N, p=w / w.sum()))
        else:
            j = int(rng.choice(np.setdiff1d(np.arange(N), medoids)))
        medoids.append(j)
        nearest = np.minimum(nearest, D[:, j])
    return np.array(medoids)


def _swap(D, medoids, max_iters):
    """Best-improvement PAM swaps until no swap lowers the cost."""
    N = D.shape[0]
    medoids = medoids.copy()
    cost = _cost(D, medoids)
    history = [cost]
    for _ in range(max_iters):
        best = (cost, None, None)
        others = np.setdiff1d(np.arange(N), medoids)
        if others.size == 0:
            break
        for slot in range(len(medoids)):
            rest = np.delete(medoids, slot)
            base = D[:, rest].min(axis=1) if rest.size else np.full(N, np.inf)
            costs = np.minimum(base[:, None], D[:, others]).sum(axis=0)
            k = int(np.argmin(costs))
            if costs[k] < best[0] - 1e-12:
                best = (float(costs[k]), slot, int(others[k]))
        if best[1] is None:
            break
        medoids[best[1]] = best[2]
        cost = best[0]
        history.append(cost)
    return medoids, cost, history


def _assign(D, medoids):
    labels = np.argmin(D[:, medoids], axis=1)
    labels[medoids] = np.arange(len(medoids))
    return labels


def kmedoids(D, K: int, config: TrajectoryConfig | None = None):
    """PAM on a precomputed distance matrix.

    Restart 0 starts from the greedy BUILD medoids, the rest from seeded
    distance-weighted draws. Returns ``(labels, medoids, cost, history)``
    with clusters ordered by medoid index.
    """
    config = config or TrajectoryConfig()
    D = np.asarray(D, dtype=float)
    N = D.shape[0]
    if N < K:
        raise DataError(f"{N} items cannot form {K} clusters")
    best = None
    for r in range(config.n_restarts):
        init = _build(D, K) if r == 0 else _random_init(D, K, np.random.default_rng([config.seed, r]))
        medoids, cost, history = _swap(D, init, config.max_iters)
        if best is None or cost < best[1] - 1e-12:
            best = (medoids, cost, history)
    medoids = np.sort(best[0])
    return _assign(D, medoids), medoids, best[1], best[2]


def cluster_trajectories(trajectories: list[Trajectory], K: int | None = None,
                         config: TrajectoryConfig | None = None,
                         matrix: TrafficStateMatrix | None = None) -> TrajectoryClustering:
    """K-medoids over trajectories; with ``matrix`` also fills the
    per-cluster mean-index curves."""
    config = config or TrajectoryConfig()
    K = config.K if K is None else K
    if len(trajectories) < K:
        raise DataError(f"{len(trajectories)} trajectories cannot form {K} clusters")
    D = distance_matrix(trajectories)
    labels, medoids, cost, history = kmedoids(D, K, config)
    result = TrajectoryClustering(labels, medoids, [trajectories[i].sequence_id for i in medoids],
                                  cost, None, history)
    if matrix is not None:
        ids = [t.sequence_id for t in trajectories]
        result.curves = np.vstack([
            mean_index_curve(matrix, [ids[i] for i in np.flatnonzero(labels == k)])
            for k in range(K)
        ])
    return result


def mean_index_curve(matrix: TrafficStateMatrix, sequence_ids) -> np.ndarray:
    """Per step: traffic index averaged over all links and listed sequences."""
    sequence_ids = list(sequence_ids)
    if not sequence_ids:
        raise DataError("no sequences given")
    blocks = []
    for sid in sequence_ids:
        start, stop = matrix.span(sid)
        blocks.append(matrix.values[:, start:stop].mean(axis=0))
    lengths = {b.shape[0] for b in blocks}
    if len(lengths) != 1:
        raise DataError("sequences differ in length")
    return np.clip(np.mean(blocks, axis=0), 0.0, 1.0)


# ---------------------------------------------------------------- file I/O


def write_distances(path, trajectories: list[Trajectory], D: np.ndarray) -> None:
    ids = [t.sequence_id for t in trajectories]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sequence_a", "sequence_b", "distance"])
        for i in range(len(ids)):
            for j in range(i + 1, len(ids)):
                w.writerow([ids[i], ids[j], repr(float(D[i, j]))])


def write_clusters(path, trajectories: list[Trajectory], result: TrajectoryClustering) -> None:
    medoid_set = set(result.medoids.tolist())
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sequence_id", "cluster", "is_medoid"])
        for i, (t, c) in enumerate(zip(trajectories, result.labels.tolist())):
            w.writerow([t.sequence_id, c, int(i in medoid_set)])


def read_clusters(path) -> dict[str, int]:
    with open(path, newline="") as fh:
        return {r["sequence_id"]: int(r["cluster"]) for r in csv.DictReader(fh)}


def write_curves(path, curves: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cluster", "step", "mean_index"])
        for k, row in enumerate(curves.tolist()):
            for t, v in enumerate(row):
                w.writerow([k, t, repr(v)])
