"""End-to-end stages behind the command-line subcommands."""

from __future__ import annotations

import contextlib
import csv
import json
import logging
import os
import shutil
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .clustering import (KSelection, extract_exemplar, purity, select_K, write_assignments,
                         write_compactness, write_exemplar)
from .config import PipelineConfig
from .domain import (GROUND_TRUTH_FILE, TrafficStateMatrix, column_labels, load_dataset,
                     load_ground_truth, load_manifest, MANIFEST_FILE)
from .errors import DataError, LpnmfError
from .factorization import (DimensionSelection, FactorizationResult, basis_importance, factorize,
                            reconstruction_error, select_dimension, write_basis_report, write_factors)
from .generator import generate_dataset
from .pca import fit_pca, pca_project, write_projections
from .similarity import (SimilarityGraph, default_weights, graph_cache_key, load_graph_cache,
                         pairwise_similarity, save_graph_cache)
from .trajectory import (build_trajectories, cluster_trajectories, distance_matrix, write_clusters,
                         write_curves, write_distances)

log = logging.getLogger(__name__)

GRAPH_CACHE_FILE = "similarity_cache.csv"
SUMMARY_FILE = "summary.json"
DEFAULT_CANDIDATE_S = tuple(range(3, 16))


@contextlib.contextmanager
def stage(name: str):
    """Tag library errors raised inside with the stage they came from."""
    log.info("stage: %s", name)
    try:
        yield
    except LpnmfError as exc:
        if not getattr(exc, "stage", None):
            exc.stage = name
        raise


def thread_limits(deterministic: bool):
    # single-threaded BLAS fixes the reduction order
    return threadpool_limits(limits=1) if deterministic else contextlib.nullcontext()


def locality_ratio(V, groups, block: int = 1024) -> float:
    """Mean within-group over mean between-group Euclidean distance of the
    columns of V. Computed in row blocks to bound memory."""
    P = np.asarray(V, dtype=float).T
    g = np.asarray(groups)
    if P.shape[0] != g.shape[0]:
        raise DataError("one group label per column required")
    sq = (P * P).sum(axis=1)
    sums = np.zeros(2)
    counts = np.zeros(2)
    for start in range(0, P.shape[0], block):
        stop = min(start + block, P.shape[0])
        d2 = sq[start:stop, None] - 2.0 * P[start:stop] @ P.T + sq[None, :]
        d = np.sqrt(np.maximum(d2, 0.0))
        upper = np.arange(P.shape[0])[None, :] > np.arange(start, stop)[:, None]
        same = g[start:stop, None] == g[None, :]
        for k, mask in enumerate((same & upper, ~same & upper)):
            sums[k] += d[mask].sum()
            counts[k] += mask.sum()
    if counts.min() == 0:
        raise DataError("need both within- and between-group pairs")
    return float((sums[0] / counts[0]) / (sums[1] / counts[1]))


# ---------------------------------------------------------------- generate


def generate(cfg: PipelineConfig, out_dir, force: bool = False) -> Path:
    """Write a synthetic dataset; the target appears only once complete."""
    out = Path(out_dir)
    if out.exists() and (not out.is_dir() or any(out.iterdir())) and not force:
        raise FileExistsError(f"{out} exists and is not empty (use --force)")
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))
    try:
        with stage("generate"):
            generate_dataset(cfg.generator, tmp)
        if out.exists():
            shutil.rmtree(out) if out.is_dir() else out.unlink()
        os.replace(tmp, out)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return out


# ---------------------------------------------------------------- analyze


def load_inputs(cfg: PipelineConfig):
    """(matrix, manifest, topology, ground-truth scenario per sample or None)."""
    with stage("load"):
        if not Path(cfg.dataset_path).is_dir():
            raise FileNotFoundError(f"dataset directory {cfg.dataset_path} not found (run generate first)")
        matrix, manifest, topology = load_dataset(cfg.dataset_path)
        truth_path = Path(cfg.dataset_path) / GROUND_TRUTH_FILE
        truth = None
        if truth_path.exists():
            labels = load_ground_truth(truth_path)
            truth = np.array([labels[sid].value if sid in labels else "" for sid, _ in matrix.column_index])
            if np.any(truth == ""):
                truth = None
    return matrix, manifest, topology, truth


def build_graph(cfg: PipelineConfig, matrix: TrafficStateMatrix, topology, out_dir=None) -> SimilarityGraph:
    """Similarity graph, reused from ``out_dir``'s cache when the key matches.

    A freshly built graph is written and read back, so a first run and a
    cached re-run feed byte-identical inputs to the solver.
    """
    with stage("similarity"):
        weights = default_weights(topology, cfg.similarity.self_weight)
        if out_dir is None or not cfg.cache_graph:
            return pairwise_similarity(matrix, topology, weights, cfg.similarity)
        path = Path(out_dir) / GRAPH_CACHE_FILE
        key = graph_cache_key(matrix, topology, weights, cfg.similarity)
        graph = load_graph_cache(path, key)
        if graph is None:
            save_graph_cache(path, pairwise_similarity(matrix, topology, weights, cfg.similarity), key)
            graph = load_graph_cache(path, key)
        return graph


def factorization_config(cfg: PipelineConfig, s: int | None = None):
    fc = replace(cfg.factorization, seed=cfg.stage_seed("factorization"))
    return fc if s is None else replace(fc, s=s)


def clustering_config(cfg: PipelineConfig):
    return replace(cfg.clustering, seed=cfg.stage_seed("clustering"))


def run_select_dimension(cfg: PipelineConfig, matrix, graph, candidates=None) -> DimensionSelection:
    candidates = list(candidates or cfg.candidate_s or DEFAULT_CANDIDATE_S)
    limit = min(matrix.n, matrix.m)
    candidates = [c for c in candidates if c < limit]
    with stage("dimension selection"):
        return select_dimension(matrix, graph, candidates, factorization_config(cfg),
                                cfg.elbow_threshold)


def write_dimension_selection(path, sel: DimensionSelection) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["s", "reconstruction_error", "recommended"])
        for s, e in zip(sel.candidates, sel.errors):
            w.writerow([s, repr(float(e)), int(s == sel.recommended)])


def run_select_k(cfg: PipelineConfig, matrix, embedding, candidates=None) -> KSelection:
    candidates = list(candidates or cfg.candidate_K or [cfg.clustering.K])
    with stage("K selection"):
        return select_K(matrix, embedding, candidates, clustering_config(cfg))


def _compactness_table(sel: KSelection) -> dict:
    return {str(K): rep.c for K, rep in zip(sel.candidates, sel.reports)}


def analyze(cfg: PipelineConfig) -> dict:
    """Run every stage and write the report bundle; returns the summary."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    with thread_limits(cfg.deterministic):
        matrix, manifest, topology, truth = load_inputs(cfg)
        labels_txt = column_labels(matrix)
        graph = build_graph(cfg, matrix, topology, out)

        dim_sel = None
        s = cfg.factorization.s
        if cfg.candidate_s:
            dim_sel = run_select_dimension(cfg, matrix, graph)
            write_dimension_selection(out / "dimension_selection.csv", dim_sel)
            s = dim_sel.recommended

        with stage("factorization"):
            result = factorize(matrix, graph, factorization_config(cfg, s))
            write_factors(out, result, topology.link_ids, labels_txt)
            report = basis_importance(result, cfg.top_fraction)
            write_basis_report(out / "basis_importance.csv", report, topology.link_ids)

        selections = {}
        ksel = run_select_k(cfg, matrix, result.V)
        selections["lpnmf"] = ksel
        if cfg.pca:
            with stage("pca"):
                model = fit_pca(matrix, min(cfg.pca_k, matrix.n, matrix.m))
                proj = pca_project(model, matrix)
                write_projections(out / "pca_projections.csv", proj, labels_txt)
            selections["pca"] = run_select_k(cfg, matrix, proj, ksel.candidates)
        write_compactness(out / "compactness.csv", selections)

        K = ksel.recommended
        assignment = ksel.assignment_for(K)
        with stage("exemplars"):
            write_assignments(out / "assignments.csv", matrix, assignment.labels)
            exemplars = []
            for k in range(K):
                ex = extract_exemplar(matrix, assignment.labels, k, cfg.clustering)
                write_exemplar(out / f"exemplar_{k}.csv", ex, topology.link_ids)
                exemplars.append({"cluster": k, "size": int(assignment.counts[k]),
                                  "n_selected": ex.n_selected, "n_congested": int(ex.congested.size)})

        with stage("trajectory"):
            trajs = build_trajectories(result.V, matrix, manifest)
            tcfg = replace(cfg.trajectory, seed=cfg.stage_seed("trajectory"))
            tres = cluster_trajectories(trajs, tcfg.K, tcfg, matrix)
            write_distances(out / "trajectory_distances.csv", trajs, distance_matrix(trajs))
            write_clusters(out / "trajectory_clusters.csv", trajs, tres)
            write_curves(out / "dynamics_curves.csv", tres.curves)

        summary = _summary(cfg, matrix, manifest, graph, result, dim_sel, selections, K,
                           exemplars, tres, trajs, truth, assignment.labels)
    (out / SUMMARY_FILE).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def _summary(cfg, matrix, manifest, graph, result: FactorizationResult, dim_sel, selections, K,
             exemplars, tres, trajs, truth, labels) -> dict:
    ground = None
    if truth is not None:
        seq_truth = np.array([t.scenario.value for t in trajs])
        ground = {
            "sample_purity": purity(labels, truth),
            "trajectory_purity": purity(tres.labels, seq_truth),
            "locality_ratio": locality_ratio(result.V, truth),
        }
    return {
        "seed": cfg.seed,
        "dataset": {"n_links": matrix.n, "n_samples": matrix.m, "n_sequences": len(manifest.sequences),
                    "n_steps": manifest.n_steps},
        "similarity": {"delta": graph.delta, "sparse": graph.sparse,
                       "mean_degree": float(np.mean(graph.D))},
        "factorization": {
            "s": result.M.shape[1],
            "lambda": cfg.factorization.lam,
            "lambda_scale": cfg.factorization.lambda_scale,
            "lambda_effective": result.lam_effective,
            "iterations": result.iters_run,
            "converged": result.converged,
            "objective": result.objective,
            "reconstruction_error": reconstruction_error(matrix, result.M, result.V),
        },
        "dimension_selection": None if dim_sel is None else {
            "candidates": dim_sel.candidates, "errors": [float(e) for e in dim_sel.errors],
            "recommended": dim_sel.recommended},
        "clustering": {
            "K": K,
            "candidate_K": selections["lpnmf"].candidates,
            "compactness": {name: _compactness_table(sel) for name, sel in selections.items()},
            "exemplars": exemplars,
        },
        "trajectory": {"K": int(tres.medoids.size), "medoids": tres.medoid_ids,
                       "total_distance": tres.total_distance,
                       "sizes": np.bincount(tres.labels, minlength=tres.medoids.size).tolist()},
        "ground_truth": ground,
    }


# ---------------------------------------------------------------- export-viz


def _read_table(path: Path):
    if not path.exists():
        raise FileNotFoundError(f"missing analysis output {path.name} in {path.parent} (run analyze first)")
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def export_viz(cfg: PipelineConfig) -> tuple[Path, Path]:
    """3-D PCA points with cluster and scenario labels, plus one polyline
    per sequence through its samples' PCA coordinates."""
    out = Path(cfg.output_dir)
    pca_rows = _read_table(out / "pca_projections.csv")
    assign_rows = _read_table(out / "assignments.csv")
    traj_rows = _read_table(out / "trajectory_clusters.csv")
    if len(pca_rows) < 4:
        raise DataError("pca_projections.csv holds fewer than three components")
    labels = pca_rows[0][1:]
    coords = np.array([[float(v) for v in r[1:]] for r in pca_rows[1:4]])
    assign = {int(r[0]): (r[1], int(r[2]), int(r[3])) for r in assign_rows[1:]}
    if len(assign) != len(labels):
        raise DataError("assignments.csv and pca_projections.csv disagree on the sample count")
    traj_cluster = {r[0]: int(r[1]) for r in traj_rows[1:]}
    scenario = {}
    manifest_path = Path(cfg.dataset_path) / MANIFEST_FILE
    if manifest_path.exists():
        scenario = load_manifest(manifest_path).scenario_map()
        scenario = {k: v.value for k, v in scenario.items()}

    points = out / "viz_points.csv"
    with open(points, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["column_index", "sequence_id", "time_step", "pc1", "pc2", "pc3", "cluster", "scenario"])
        for j in range(len(labels)):
            seq, t, c = assign[j]
            w.writerow([j, seq, t, *(repr(float(v)) for v in coords[:, j]), c, scenario.get(seq, "")])
    lines = out / "viz_trajectories.csv"
    with open(lines, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sequence_id", "trajectory_cluster", "scenario", "time_step", "pc1", "pc2", "pc3"])
        for j in range(len(labels)):
            seq, t, _ = assign[j]
            if seq not in traj_cluster:
                raise DataError(f"sequence {seq!r} missing from trajectory_clusters.csv")
            w.writerow([seq, traj_cluster[seq], scenario.get(seq, ""), t,
                        *(repr(float(v)) for v in coords[:, j])])
    return points, lines
