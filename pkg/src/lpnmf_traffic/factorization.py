"""Plain and locality-preserving NMF by multiplicative updates.

Minimizes ``||X - M V||_F^2 + lam * Tr(V L V^T)`` over non-negative M (n x s)
and V (s x m). With ``lam = 0`` this is plain Frobenius NMF.

The reconstruction term grows with the number of links while the graph term
does not, so by default the configured lambda is multiplied by the mean
squared column norm of X (``lambda_scale="column"``). ``"none"`` uses it as is.

Update rules (W0, D0: similarity matrix without its diagonal and its row
sums; the diagonal does not enter L, so dropping it leaves the objective
unchanged)::

    M <- M * (X V^T) / (M V V^T + eps)
    V <- V * (M^T X + lam V W0) / (M^T M V + lam V diag(D0) + eps)
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.optimize import nnls

from .domain import TrafficStateMatrix, n_top
from .errors import ConfigError, DataError, NumericalError
from .similarity import SimilarityGraph, laplacian_quadratic


LAMBDA_SCALES = ("column", "none")


@dataclass(frozen=True)
class FactorizationConfig:
    s: int = 7
    lam: float = 1.0
    max_iters: int = 1000
    rel_tol: float = 1e-6
    window: int = 5
    seed: int = 0
    epsilon: float = 1e-12
    lambda_scale: str = "column"

    def __post_init__(self):
        if self.lambda_scale not in LAMBDA_SCALES:
            raise ConfigError(f"lambda_scale must be one of {LAMBDA_SCALES}")
        if self.s < 1:
            raise ConfigError("s must be >= 1")
        if self.lam < 0:
            raise ConfigError("lambda must be >= 0")
        if self.max_iters < 1 or self.window < 1:
            raise ConfigError("max_iters and window must be >= 1")
        if self.rel_tol < 0:
            raise ConfigError("rel_tol must be >= 0")
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be > 0")


def effective_lambda(X, config: FactorizationConfig) -> float:
    """Lambda as applied to the objective for this X."""
    lam = float(config.lam)
    if config.lambda_scale == "column" and lam > 0:
        X = _as_array(X)
        lam *= float(np.vdot(X, X)) / X.shape[1]
    return lam


@dataclass
class FactorizationResult:
    M: np.ndarray
    V: np.ndarray
    objective_trace: np.ndarray
    reconstruction_trace: np.ndarray
    laplacian_trace: np.ndarray
    iters_run: int
    converged: bool
    config: FactorizationConfig = field(default_factory=FactorizationConfig)
    lam_effective: float = 0.0

    @property
    def objective(self) -> float:
        return float(self.objective_trace[-1])


def _as_array(X) -> np.ndarray:
    if isinstance(X, TrafficStateMatrix):
        return X.values
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise DataError("X must be a 2-D matrix")
    return X


def reconstruction_error(X, M, V) -> float:
    """Frobenius norm of X - M V."""
    X = _as_array(X)
    M = np.asarray(M, dtype=float)
    V = np.asarray(V, dtype=float)
    if M.ndim != 2 or V.ndim != 2 or M.shape[1] != V.shape[0] or (M.shape[0], V.shape[1]) != X.shape:
        raise DataError(f"shape mismatch: X {X.shape}, M {M.shape}, V {V.shape}")
    return float(np.linalg.norm(X - M @ V))


# Below this fraction of ||X||^2 the expanded form of the reconstruction
# term loses too many digits to cancellation; use the explicit residual.
_EXPANSION_FLOOR = 1e-4


def _reconstruction_term(X, M, V, x_sq, MtX=None, MtM=None):
    if MtX is not None:
        rec = x_sq - 2.0 * float(np.vdot(MtX, V)) + float(np.vdot(MtM, V @ V.T))
        if rec > _EXPANSION_FLOOR * x_sq:
            return rec
    R = X - M @ V
    return float(np.vdot(R, R))


def factorize(X, graph: SimilarityGraph | None = None,
              config: FactorizationConfig | None = None) -> FactorizationResult:
    """Fit M, V by alternating multiplicative updates.

    Stops after ``max_iters`` or once the relative objective decrease stays
    below ``rel_tol`` for ``window`` consecutive iterations. The traces hold
    the initial value followed by one entry per iteration.
    """
    config = config or FactorizationConfig()
    X = _as_array(X)
    n, m = X.shape
    if not np.all(np.isfinite(X)):
        raise DataError("X contains non-finite values")
    if np.any(X < 0):
        raise DataError("X must be non-negative")
    s = config.s
    if s >= min(n, m):
        raise ConfigError(f"s={s} must be < min(n, m)={min(n, m)}")
    lam = effective_lambda(X, config)
    if lam > 0:
        if graph is None:
            raise ConfigError("lambda > 0 requires a similarity graph")
        if graph.m != m:
            raise DataError(f"graph has {graph.m} nodes but X has {m} columns")
        W0, D0 = graph.offdiagonal()
        L = graph.L
    else:
        W0 = D0 = L = None

    rng = np.random.default_rng(config.seed)
    # 1 - U[0,1) lies in (0, 1]; strictly positive entries avoid absorbing zeros
    M = 1.0 - rng.random((n, s))
    V = 1.0 - rng.random((s, m))
    eps = config.epsilon

    x_sq = float(np.vdot(X, X))
    rec = _reconstruction_term(X, M, V, x_sq)
    lap = laplacian_quadratic(V, L) if lam > 0 else 0.0
    recs, laps, objs = [rec], [lap], [rec + lam * lap]
    quiet = 0
    converged = False
    it = 0
    for it in range(1, config.max_iters + 1):
        M *= (X @ V.T) / (M @ (V @ V.T) + eps)
        MtX = M.T @ X
        MtM = M.T @ M
        num = MtX.copy()
        den = MtM @ V
        if lam > 0:
            num += lam * np.asarray(W0 @ V.T).T
            den += lam * (V * D0)
        den += eps
        V *= num / den

        rec = _reconstruction_term(X, M, V, x_sq, MtX, MtM)
        lap = laplacian_quadratic(V, L) if lam > 0 else 0.0
        obj = rec + lam * lap
        if not math.isfinite(obj):
            raise NumericalError(f"objective became non-finite at iteration {it}")
        recs.append(rec)
        laps.append(lap)
        prev = objs[-1]
        objs.append(obj)
        decrease = (prev - obj) / prev if prev > 0 else 0.0
        quiet = quiet + 1 if decrease < config.rel_tol else 0
        if quiet >= config.window:
            converged = True
            break

    if not (np.all(np.isfinite(M)) and np.all(np.isfinite(V))):
        raise NumericalError("factors contain non-finite values")
    return FactorizationResult(M, V, np.array(objs), np.array(recs), np.array(laps),
                               it, converged, config, lam)


def project(M, x_new, config: FactorizationConfig | None = None) -> np.ndarray:
    """Non-negative coordinates of new column(s) in the fixed basis M.

    Solves the non-negative least-squares problem exactly (active set).
    The graph term does not apply to an unseen sample, so ``config`` is
    accepted for interface symmetry only. Accepts an n-vector or an n x k
    matrix.
    """
    M = np.asarray(M, dtype=float)
    x = np.asarray(x_new, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[:, None]
    if M.ndim != 2 or x.ndim != 2 or x.shape[0] != M.shape[0]:
        raise DataError(f"dimension mismatch: M {M.shape}, x {x.shape}")
    if np.any(x < 0) or not np.all(np.isfinite(x)):
        raise DataError("x_new must be finite and non-negative")
    v = np.column_stack([nnls(M, x[:, j])[0] for j in range(x.shape[1])])
    return v[:, 0] if single else v


@dataclass
class DimensionSelection:
    candidates: list[int]
    errors: list[float]
    recommended: int
    threshold: float


def elbow(candidates, errors, threshold: float = 0.2) -> int:
    """Last candidate before the first marginal decrease that falls below
    ``threshold`` times the mean of the decreases preceding it. If the error
    does not drop at all from the first candidate, that candidate wins."""
    if len(candidates) == 1:
        return candidates[0]
    drops = [errors[i - 1] - errors[i] for i in range(1, len(errors))]
    if drops[0] <= 0:
        return candidates[0]
    for j in range(1, len(drops)):
        if drops[j] < threshold * float(np.mean(drops[:j])):
            return candidates[j]
    return candidates[-1]


def select_dimension(X, graph: SimilarityGraph | None, candidate_s,
                     config: FactorizationConfig | None = None,
                     threshold: float = 0.2) -> DimensionSelection:
    """Reconstruction error per candidate s and the elbow recommendation."""
    config = config or FactorizationConfig()
    candidates = [int(c) for c in candidate_s]
    if not candidates:
        raise ConfigError("candidate_s is empty")
    if candidates != sorted(set(candidates)):
        raise ConfigError("candidate_s must be strictly ascending")
    Xa = _as_array(X)
    errors = []
    for s in candidates:
        res = factorize(Xa, graph, replace(config, s=s))
        errors.append(reconstruction_error(Xa, res.M, res.V))
    return DimensionSelection(candidates, errors, elbow(candidates, errors, threshold), threshold)


@dataclass
class BasisImportanceReport:
    importance: np.ndarray
    ranking: np.ndarray
    top_links: list[np.ndarray]
    top_fraction: float


def basis_importance(result: FactorizationResult, top_fraction: float = 0.20) -> BasisImportanceReport:
    """Row-wise average of V per basis, ranked descending, with the link
    indices of each basis column's largest ``top_fraction`` entries."""
    M, V = result.M, result.V
    k = n_top(top_fraction, M.shape[0])
    importance = V.mean(axis=1)
    ranking = np.argsort(-importance, kind="stable")
    top = []
    for i in range(M.shape[1]):
        order = np.argsort(-M[:, i], kind="stable")
        top.append(np.sort(order[:k]))
    return BasisImportanceReport(importance, ranking, top, top_fraction)


# ---------------------------------------------------------------- file I/O


def write_factors(directory, result: FactorizationResult, link_ids, column_labels) -> None:
    d = Path(directory)
    s = result.M.shape[1]
    with open(d / "M.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["link_id"] + [f"basis_{i}" for i in range(s)])
        for lid, row in zip(link_ids, result.M.tolist()):
            w.writerow([lid] + [repr(v) for v in row])
    with open(d / "V.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["basis"] + list(column_labels))
        for i, row in enumerate(result.V.tolist()):
            w.writerow([f"basis_{i}"] + [repr(v) for v in row])
    with open(d / "trace.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "objective", "reconstruction_term", "laplacian_term"])
        for k, (o, r, l) in enumerate(zip(result.objective_trace.tolist(),
                                          result.reconstruction_trace.tolist(),
                                          result.laplacian_trace.tolist())):
            w.writerow([k, repr(o), repr(r), repr(l)])


def read_factors(directory):
    """Load ``M.csv`` and ``V.csv``; returns (M, V, link_ids, column_labels)."""
    d = Path(directory)
    with open(d / "M.csv", newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    link_ids = [r[0] for r in rows]
    M = np.array([[float(v) for v in r[1:]] for r in rows])
    with open(d / "V.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    labels = rows[0][1:]
    V = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    return M, V, link_ids, labels


def write_basis_report(path, report: BasisImportanceReport, link_ids) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rank", "basis", "importance", "top_links"])
        for rank, b in enumerate(report.ranking.tolist()):
            links = ";".join(link_ids[i] for i in report.top_links[b].tolist())
            w.writerow([rank, b, repr(float(report.importance[b])), links])
