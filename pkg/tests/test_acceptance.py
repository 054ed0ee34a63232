"""Acceptance criteria 1-10.

Each test records its measured values; conftest prints one PASS/FAIL line
per criterion in the terminal summary. Criteria 4-7 and 9 share one
default-size dataset and analysis bundle built once per session.
"""

import csv
import json
import time
from dataclasses import replace

import numpy as np
import pytest
import scipy.sparse as sp

from lpnmf_traffic import pipeline
from lpnmf_traffic.clustering import ClusteringConfig, extract_exemplar, kmeans, purity
from lpnmf_traffic.config import PipelineConfig
from lpnmf_traffic.domain import load_dataset
from lpnmf_traffic.factorization import (FactorizationConfig, effective_lambda, factorize,
                                         read_factors, reconstruction_error, select_dimension)
from lpnmf_traffic.generator import GeneratorConfig, build_grid
from lpnmf_traffic.similarity import SimilarityGraph, laplacian_quadratic, pairwise_similarity

from conftest import chain_topology

PEAK = (18, 40)


def objective(X, M, V, graph, lam_eff):
    rec = np.sum((X - M @ V) ** 2)
    return rec if graph is None else rec + lam_eff * laplacian_quadratic(V, graph.L)


# ---------------------------------------------------------------- shared bundle


@pytest.fixture(scope="session")
def bundle(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance")
    cfg = PipelineConfig(dataset_path=root / "data", output_dir=root / "out", deterministic=True)
    pipeline.generate(cfg, cfg.dataset_path)
    start = time.perf_counter()
    summary = pipeline.analyze(cfg)
    elapsed = time.perf_counter() - start
    matrix, manifest, topology = load_dataset(cfg.dataset_path)
    _, V, _, _ = read_factors(cfg.output_dir)
    scen = np.array([manifest.scenario_of(s).value for s, _ in matrix.column_index])
    return {"cfg": cfg, "summary": summary, "elapsed": elapsed, "matrix": matrix,
            "manifest": manifest, "topology": topology, "V": V, "scenario": scen}


# ---------------------------------------------------------------- criteria


def test_criterion_01_mu_monotone(record_property):
    """criterion 1: MU objective non-increasing for 600 iterations, all lambdas"""
    rng = np.random.default_rng(101)
    X = rng.random((200, 500))
    graph = pairwise_similarity(X, chain_topology(200))
    start = time.perf_counter()
    worst = -np.inf
    for scale in ("column", "none"):
        for lam in (0.0, 0.1, 1.0, 10.0):
            cfg = FactorizationConfig(s=7, lam=lam, lambda_scale=scale, max_iters=600, rel_tol=0.0, seed=5)
            r = factorize(X, graph, cfg)
            t = np.asarray(r.objective_trace)
            assert r.iters_run == 600
            worst = max(worst, float(np.max((t[1:] - t[:-1]) / t[:-1])))
            assert np.all(t[1:] <= t[:-1] * (1 + 1e-10)), (scale, lam)
    elapsed = time.perf_counter() - start
    record_property("max_rel_increase", f"{worst:.2e}")
    record_property("seconds", f"{elapsed:.1f}")
    assert elapsed < 60


def test_criterion_02_planted_rank(record_property):
    """criterion 2: planted rank-3 product recovered and selected"""
    rng = np.random.default_rng(102)
    X = (1.0 - rng.random((50, 3))) @ (1.0 - rng.random((3, 120)))
    cfg = FactorizationConfig(s=3, lam=0.0)
    r = factorize(X, None, cfg)
    rel = reconstruction_error(X, r.M, r.V) / np.linalg.norm(X)
    sel = select_dimension(X, None, range(1, 7), cfg)
    record_property("relative_error", f"{rel:.2e}")
    record_property("recommended_s", sel.recommended)
    assert rel < 1e-2
    assert sel.recommended == 3


def test_criterion_03_laplacian(record_property):
    """criterion 3: Laplacian rows sum to zero, PSD, trace equals pairwise form"""
    rng = np.random.default_rng(103)
    worst_row, worst_rel, worst_neg = 0.0, 0.0, 0.0
    for k in range(1000):
        m = int(rng.integers(2, 40))
        if k % 2:
            # graphs built by the similarity stage on random states
            n = int(rng.integers(1, 12))
            X = rng.random((n, m))
            g = pairwise_similarity(X, chain_topology(n))
        else:
            density = rng.uniform(0.05, 1.0)
            W = rng.random((m, m)) * (rng.random((m, m)) < density)
            W = np.maximum(W, W.T)
            np.fill_diagonal(W, 1.0)
            g = SimilarityGraph.from_weights(sp.csr_matrix(W) if k % 4 == 2 else W)
        L = g.L.toarray() if sp.issparse(g.L) else g.L
        W = g.W.toarray() if sp.issparse(g.W) else g.W
        worst_row = max(worst_row, float(np.abs(L.sum(axis=1)).max()))
        V = rng.random((int(rng.integers(1, 8)), m)) * rng.uniform(0.1, 10)
        tr = laplacian_quadratic(V, g.L)
        diff = V[:, :, None] - V[:, None, :]
        pair = 0.5 * float(np.sum(W[None] * diff ** 2))
        worst_neg = min(worst_neg, tr / np.sum(V ** 2))
        if pair > 0:
            worst_rel = max(worst_rel, abs(tr - pair) / pair)
        else:
            assert abs(tr) <= 1e-12 * np.sum(V ** 2)
    record_property("max_row_sum", f"{worst_row:.1e}")
    record_property("max_rel_gap", f"{worst_rel:.1e}")
    assert worst_row <= 1e-12
    assert worst_neg >= -1e-9
    assert worst_rel <= 1e-9


def test_criterion_04_locality(bundle, record_property):
    """criterion 4: regularization lowers the within/between scenario distance ratio by >= 10%"""
    cfg, matrix = bundle["cfg"], bundle["matrix"]
    ratio = bundle["summary"]["ground_truth"]["locality_ratio"]
    graph = pipeline.build_graph(cfg, matrix, bundle["topology"], cfg.output_dir)
    with pipeline.thread_limits(True):
        r0 = factorize(matrix, graph, replace(pipeline.factorization_config(cfg), lam=0.0))
    ratio0 = pipeline.locality_ratio(r0.V, bundle["scenario"])
    record_property("ratio_default", f"{ratio:.4f}")
    record_property("ratio_lambda0", f"{ratio0:.4f}")
    assert ratio <= 0.9 * ratio0


def test_criterion_05_spatial_patterns(bundle, record_property):
    """criterion 5: scenario-pure K=3 peak clusters and a heavy-congestion K=5 cluster"""
    cfg, V, scen = bundle["cfg"], bundle["V"], bundle["scenario"]
    steps = bundle["matrix"].steps()
    peak = (steps >= PEAK[0]) & (steps <= PEAK[1])
    ccfg = pipeline.clustering_config(cfg)
    k3 = kmeans(V[:, peak], replace(ccfg, K=3))
    p3 = purity(k3.labels, scen[peak])
    k5 = kmeans(V, replace(ccfg, K=5))
    etd_peak = (scen == "ETD") & peak
    heavy = max(range(5), key=lambda k: int(np.sum(etd_peak & (k5.labels == k))))
    members = k5.labels == heavy
    p5 = float(np.mean(scen[members] == "ETD"))
    record_property("peak_K3_purity", f"{p3:.3f}")
    record_property("heavy_cluster_purity", f"{p5:.3f}")
    record_property("analyze_seconds", f"{bundle['elapsed']:.0f}")
    assert p3 >= 0.9
    assert p5 >= 0.85
    assert bundle["elapsed"] < 300


def test_criterion_06_compactness(bundle, record_property):
    """criterion 6: compactness falls from K=3 to K=5 and PCA is looser at K=3"""
    table = bundle["summary"]["clustering"]["compactness"]
    lp = [table["lpnmf"][str(K)] for K in (3, 4, 5)]
    pca3 = table["pca"]["3"]
    record_property("lpnmf_c", "/".join(f"{c:.3f}" for c in lp))
    record_property("pca_c3", f"{pca3:.3f}")
    assert lp[0] > lp[1] > lp[2]
    assert pca3 > lp[0]


def test_criterion_07_trajectories(bundle, record_property):
    """criterion 7: trajectory clusters match scenarios and the heavy curve does not recover"""
    out = bundle["cfg"].output_dir
    manifest = bundle["manifest"]
    with open(out / "trajectory_clusters.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    labels = np.array([int(r["cluster"]) for r in rows])
    truth = np.array([manifest.scenario_of(r["sequence_id"]).value for r in rows])
    p = purity(labels, truth)
    with open(out / "dynamics_curves.csv", newline="") as fh:
        curve_rows = list(csv.DictReader(fh))
    K = labels.max() + 1
    curves = np.zeros((K, manifest.n_steps))
    for r in curve_rows:
        curves[int(r["cluster"]), int(r["step"])] = float(r["mean_index"])

    def majority(name):
        return max(range(K), key=lambda k: int(np.sum((labels == k) & (truth == name))))

    etd, itd = curves[majority("ETD")], curves[majority("ITD")]
    gap = itd[-1] - etd[-1]
    after_min = etd[int(np.argmin(etd)):]
    record_property("purity", f"{p:.3f}")
    record_property("final_gap", f"{gap:.3f}")
    record_property("post_min_max", f"{after_min.max():.3f}")
    assert p >= 0.9
    assert majority("ETD") != majority("ITD")
    assert gap >= 0.15
    assert after_min.max() <= 0.9


def test_criterion_08_exemplar(record_property):
    """criterion 8: exemplar flags the planted congestion region"""
    rng = np.random.default_rng(108)
    net = build_grid(GeneratorConfig(grid_rows=10, grid_cols=10))
    n = net.topology.n_links
    planted = np.linalg.norm(net.midpoints - np.array([0.35, 0.6]), axis=1) < 0.25
    m = 400
    severity = rng.random(m)
    X = 1.0 - 0.02 * rng.random((n, m))
    depth = 0.5 * severity[None, :] * (1.0 + 0.1 * rng.standard_normal((int(planted.sum()), m)))
    X[planted] -= depth
    # unrelated background congestion, light and scattered
    X -= 0.1 * (rng.random((n, m)) < 0.05)
    X = np.clip(X, 0.0, 1.0)
    labels = np.zeros(m, dtype=int)
    ex = extract_exemplar(X, labels, 0, ClusteringConfig(exemplar_fraction=0.30, congestion_threshold=0.79))
    flagged = np.zeros(n, dtype=bool)
    flagged[ex.congested] = True
    hit = float(np.mean(flagged[planted]))
    false = float(np.mean(flagged[~planted]))
    record_property("planted_flagged", f"{hit:.3f}")
    record_property("free_flagged", f"{false:.3f}")
    assert planted.sum() >= 10
    assert hit >= 0.9
    assert false <= 0.1


def test_criterion_09_determinism(bundle, tmp_path, record_property):
    """criterion 9: a second deterministic analyze reproduces the bundle byte for byte"""
    first = bundle["cfg"].output_dir
    cfg = replace(bundle["cfg"], output_dir=tmp_path / "again")
    pipeline.analyze(cfg)
    names = sorted(p.name for p in first.iterdir())
    assert names == sorted(p.name for p in cfg.output_dir.iterdir())
    differing = [nm for nm in names if (first / nm).read_bytes() != (cfg.output_dir / nm).read_bytes()]
    record_property("files", len(names))
    record_property("differing", len(differing))
    assert not differing, differing
    assert json.loads((first / "summary.json").read_text()) == bundle["summary"]


def test_criterion_10_brute_force_oracle(record_property):
    """criterion 10: MU fixed point beats 10,000 random factor pairs on a 4x6 matrix"""
    rng = np.random.default_rng(110)
    X = rng.random((4, 6))
    W = rng.random((6, 6))
    W = np.maximum(W, W.T)
    np.fill_diagonal(W, 1.0)
    graph = SimilarityGraph.from_weights(W)
    s = 2
    margins = []
    for lam in (0.0, 1.0):
        cfg = FactorizationConfig(s=s, lam=lam, max_iters=20000, rel_tol=1e-12)
        r = factorize(X, graph, cfg)
        lam_eff = effective_lambda(X, cfg)
        fixed = objective(X, r.M, r.V, graph, lam_eff)
        assert np.isclose(fixed, r.objective, rtol=1e-9)
        hi = 2.0 * np.sqrt(X.max())
        Ms = rng.uniform(0.0, hi, (10000, 4, s))
        Vs = rng.uniform(0.0, hi, (10000, s, 6))
        rec = np.sum((X[None] - Ms @ Vs) ** 2, axis=(1, 2))
        lap = np.einsum("kij,jl,kil->k", Vs, np.asarray(graph.L), Vs)
        samples = rec + lam_eff * lap
        margins.append(float(samples.min() - fixed))
        assert fixed <= samples.min()
    record_property("min_margin", f"{min(margins):.3e}")
