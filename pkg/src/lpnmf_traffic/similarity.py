"""Topology-aware sample similarity and the graph Laplacian.

The local variation around link i fuses absolute link-wise differences of
the link and its upstream/downstream neighbors with weights summing to 1.
Because the fusion is linear in the difference vector, the per-pair mean
local variation collapses to a weighted L1 distance between the two
columns, ``sum_k c_k |x_k - y_k|`` with ``c = A^T 1 / n`` for fusion
matrix ``A``. ``pairwise_similarity`` uses that form; ``local_variation``
keeps the per-link definition.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.spatial.distance import pdist, squareform

from .domain import NetworkTopology, TrafficStateMatrix
from .errors import ConfigError, DataError

AUTO_KNN_THRESHOLD = 500
AUTO_KNN = 10


@dataclass(frozen=True)
class NeighborWeights:
    """Per-link fusion weights.

    ``upstream[i]`` and ``downstream[i]`` are aligned with the topology's
    neighbor lists for link i.
    """

    self_weight: tuple[float, ...]
    upstream: tuple[tuple[float, ...], ...]
    downstream: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        n = len(self.self_weight)
        if len(self.upstream) != n or len(self.downstream) != n:
            raise DataError("neighbor weight lists differ in length")
        for i in range(n):
            ws = self.self_weight[i]
            others = self.upstream[i] + self.downstream[i]
            if ws < 0 or any(w < 0 for w in others):
                raise DataError(f"link {i}: negative weight")
            if abs(ws + sum(others) - 1.0) > 1e-12:
                raise DataError(f"link {i}: weights do not sum to 1")
            if others and not ws > max(others):
                raise DataError(f"link {i}: self weight must be the strict maximum")

    def check(self, topology: NetworkTopology) -> None:
        if len(self.self_weight) != topology.n_links:
            raise DataError("weights and topology differ in link count")
        for i in range(topology.n_links):
            if (len(self.upstream[i]) != len(topology.upstream[i])
                    or len(self.downstream[i]) != len(topology.downstream[i])):
                raise DataError(f"link {i}: weight/topology neighbor mismatch")


def default_weights(topology: NetworkTopology, self_weight: float = 0.5) -> NeighborWeights:
    """Self weight ``self_weight``, remainder split evenly over neighbors.

    A link with no neighbors gets self weight 1. Where the even split would
    give a neighbor at least the self weight (a single neighbor at the
    default 0.5), the self weight falls back to twice a neighbor's share.
    """
    if not 0.0 < self_weight < 1.0:
        raise ConfigError("self_weight must be in (0, 1)")
    ws, ups, downs = [], [], []
    for i in range(topology.n_links):
        k = topology.neighbor_count(i)
        if k == 0:
            w_self = 1.0
        else:
            w_self = self_weight
            if (1.0 - w_self) / k >= w_self:
                w_self = 2.0 / (k + 2)
        w_nbr = (1.0 - w_self) / k if k else 0.0
        ws.append(w_self)
        ups.append((w_nbr,) * len(topology.upstream[i]))
        downs.append((w_nbr,) * len(topology.downstream[i]))
    return NeighborWeights(tuple(ws), tuple(ups), tuple(downs))


def fusion_matrix(topology: NetworkTopology, weights: NeighborWeights) -> sp.csr_matrix:
    """Sparse n x n matrix A with ``local_variation = A @ diff``."""
    weights.check(topology)
    rows, cols, vals = [], [], []
    for i in range(topology.n_links):
        rows.append(i)
        cols.append(i)
        vals.append(weights.self_weight[i])
        for j, w in zip(topology.upstream[i], weights.upstream[i]):
            rows.append(i)
            cols.append(j)
            vals.append(w)
        for j, w in zip(topology.downstream[i], weights.downstream[i]):
            rows.append(i)
            cols.append(j)
            vals.append(w)
    n = topology.n_links
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def linkwise_difference(state_a, state_b) -> np.ndarray:
    a = np.asarray(state_a, dtype=float)
    b = np.asarray(state_b, dtype=float)
    if a.shape != b.shape:
        raise DataError(f"state length mismatch: {a.shape} vs {b.shape}")
    return np.abs(a - b)


def local_variation(diff, topology: NetworkTopology, weights: NeighborWeights) -> np.ndarray:
    """Weighted fusion of link-wise differences over each link's neighborhood."""
    diff = np.asarray(diff, dtype=float)
    if diff.shape != (topology.n_links,):
        raise DataError("difference vector does not match the topology")
    return fusion_matrix(topology, weights) @ diff


@dataclass(frozen=True)
class SimilarityConfig:
    delta: float | None = None          # None: median heuristic
    knn: int | str | None = "auto"      # "auto": AUTO_KNN when m > AUTO_KNN_THRESHOLD
    aggregation: str = "mean"           # or "sum"
    self_weight: float = 0.5

    def __post_init__(self):
        if self.delta is not None and not self.delta > 0:
            raise ConfigError("delta must be > 0")
        if self.aggregation not in ("mean", "sum"):
            raise ConfigError("aggregation must be 'mean' or 'sum'")
        if isinstance(self.knn, str) and self.knn != "auto":
            raise ConfigError("knn must be 'auto', None or an integer")
        if isinstance(self.knn, int) and self.knn < 1:
            raise ConfigError("knn must be >= 1")

    def resolve_knn(self, m: int) -> int | None:
        knn = self.knn
        if knn == "auto":
            knn = AUTO_KNN if m > AUTO_KNN_THRESHOLD else None
        if knn is not None and not 1 <= knn <= m - 1:
            raise ConfigError(f"knn must be in [1, {m - 1}]")
        return knn


@dataclass(frozen=True)
class SimilarityGraph:
    """Similarity matrix W with degrees D and Laplacian L = diag(D) - W.

    ``W`` and ``L`` are dense arrays or CSR matrices. ``W`` keeps a unit
    diagonal; the diagonal cancels in ``L``.
    """

    W: np.ndarray | sp.csr_matrix
    D: np.ndarray
    L: np.ndarray | sp.csr_matrix
    delta: float = float("nan")

    @classmethod
    def from_weights(cls, W, delta: float = float("nan")) -> "SimilarityGraph":
        if sp.issparse(W):
            W = sp.csr_matrix(W, dtype=float)
            D = np.asarray(W.sum(axis=1)).ravel()
            L = (sp.diags(D) - W).tocsr()
        else:
            W = np.array(W, dtype=float)
            D = W.sum(axis=1)
            L = np.diag(D) - W
        if W.shape[0] != W.shape[1]:
            raise DataError("W must be square")
        return cls(W, D, L, delta)

    @property
    def m(self) -> int:
        return self.W.shape[0]

    @property
    def sparse(self) -> bool:
        return sp.issparse(self.W)

    def offdiagonal(self):
        """W with its diagonal removed, and the matching degree vector.

        Used by the factorization updates; the Laplacian is unchanged.
        """
        if self.sparse:
            W0 = self.W.copy()
            W0.setdiag(0.0)
            W0.eliminate_zeros()
            return W0, np.asarray(W0.sum(axis=1)).ravel()
        W0 = self.W.copy()
        np.fill_diagonal(W0, 0.0)
        return W0, W0.sum(axis=1)


def mean_variation_matrix(matrix: TrafficStateMatrix | np.ndarray, topology: NetworkTopology,
                          weights: NeighborWeights, aggregation: str = "mean") -> np.ndarray:
    """Condensed (pdist-order) vector of aggregated local variations per pair."""
    X = matrix.values if isinstance(matrix, TrafficStateMatrix) else np.asarray(matrix, dtype=float)
    if X.shape[0] != topology.n_links:
        raise DataError("matrix rows do not match topology link count")
    A = fusion_matrix(topology, weights)
    c = np.asarray(A.sum(axis=0)).ravel()
    if aggregation == "mean":
        c = c / topology.n_links
    return pdist(X.T * c, metric="cityblock")


def median_delta(variations: np.ndarray) -> float:
    """Bandwidth putting the median pair at similarity e^-1 (2 delta^2 = median)."""
    med = float(np.median(variations))
    if med <= 0:
        med = float(variations[variations > 0].min()) if np.any(variations > 0) else 1.0
    return float(np.sqrt(med / 2.0))


def pairwise_similarity(matrix: TrafficStateMatrix | np.ndarray, topology: NetworkTopology,
                        weights: NeighborWeights | None = None,
                        config: SimilarityConfig | None = None) -> SimilarityGraph:
    """Gaussian-kernel similarity of every column pair."""
    config = config or SimilarityConfig()
    weights = weights or default_weights(topology, config.self_weight)
    X = matrix.values if isinstance(matrix, TrafficStateMatrix) else np.asarray(matrix, dtype=float)
    m = X.shape[1]
    if m < 2:
        raise DataError("need at least two samples to build a similarity graph")
    knn = config.resolve_knn(m)

    v = mean_variation_matrix(X, topology, weights, config.aggregation)
    delta = config.delta if config.delta is not None else median_delta(v)
    v *= -1.0 / (2.0 * delta * delta)
    np.exp(v, out=v)
    S = squareform(v)
    del v
    np.fill_diagonal(S, 1.0)
    if knn is None:
        return SimilarityGraph.from_weights(S, delta)

    np.fill_diagonal(S, -np.inf)
    rows = np.repeat(np.arange(m), knn)
    cols = np.empty(m * knn, dtype=np.int64)
    block = 512
    for start in range(0, m, block):
        stop = min(start + block, m)
        part = np.argpartition(-S[start:stop], knn - 1, axis=1)[:, :knn]
        part.sort(axis=1)
        cols[start * knn:stop * knn] = part.ravel()
    vals = S[rows, cols]
    del S
    W = sp.csr_matrix((vals, (rows, cols)), shape=(m, m))
    W = W.maximum(W.T).tolil()
    W.setdiag(1.0)
    return SimilarityGraph.from_weights(W.tocsr(), delta)


def laplacian_quadratic(V, L) -> float:
    """Tr(V L V^T) for an s x m matrix V."""
    V = np.asarray(V, dtype=float)
    if V.ndim != 2 or L.shape != (V.shape[1], V.shape[1]):
        raise DataError(f"shape mismatch: V {V.shape}, L {L.shape}")
    LVt = L @ V.T
    return float(np.sum(V.T * np.asarray(LVt)))


# ---------------------------------------------------------------- cache


def graph_cache_key(matrix: TrafficStateMatrix, topology: NetworkTopology,
                    weights: NeighborWeights, config: SimilarityConfig) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(matrix.values).tobytes())
    h.update(json.dumps([matrix.column_index, topology.upstream, topology.downstream,
                         weights.self_weight, weights.upstream, weights.downstream,
                         config.delta, config.knn, config.aggregation]).encode())
    return h.hexdigest()


def save_graph_cache(path, graph: SimilarityGraph, key: str) -> None:
    """Write the upper triangle of W as ``i,j,value`` rows behind a key line."""
    W = sp.triu(sp.csr_matrix(graph.W)).tocoo()
    order = np.lexsort((W.col, W.row))
    with open(path, "w") as fh:
        fh.write(f"# key={key} m={graph.m} delta={graph.delta!r}\n")
        fh.write("i,j,value\n")
        for i, j, v in zip(W.row[order].tolist(), W.col[order].tolist(), W.data[order].tolist()):
            fh.write(f"{i},{j},{v!r}\n")


def load_graph_cache(path, key: str, sparse: bool | None = None) -> SimilarityGraph | None:
    """Rebuild a graph from a cache file; ``None`` if missing or stale."""
    path = Path(path)
    if not path.exists():
        return None
    with open(path) as fh:
        first = fh.readline().strip()
        meta = dict(tok.split("=", 1) for tok in first.lstrip("# ").split())
        if meta.get("key") != key:
            return None
        m = int(meta["m"])
        fh.readline()
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    i = data[:, 0].astype(np.int64)
    j = data[:, 1].astype(np.int64)
    v = data[:, 2]
    off = i != j
    W = sp.csr_matrix(
        (np.concatenate([v, v[off]]), (np.concatenate([i, j[off]]), np.concatenate([j, i[off]]))),
        shape=(m, m),
    )
    if sparse is None:
        sparse = W.nnz < m * m
    if not sparse:
        W = W.toarray()
    return SimilarityGraph.from_weights(W, float(meta.get("delta", "nan")))
