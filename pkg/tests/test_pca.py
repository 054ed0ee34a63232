import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.distance import pdist

from lpnmf_traffic.errors import ConfigError, DataError
from lpnmf_traffic.pca import fit_pca, pca_project, write_projections


def test_plane_fully_explained():
    rng = np.random.default_rng(0)
    basis = rng.standard_normal((10, 2))
    X = rng.standard_normal((10, 1)) + basis @ rng.standard_normal((2, 40))
    model = fit_pca(X, 2)
    assert math.isclose(model.explained_fraction, 1.0, abs_tol=1e-9)


def test_isotropic_noise_first_component_fraction():
    # oracle: the full eigenspectrum of the sample covariance
    rng = np.random.default_rng(1)
    X = rng.standard_normal((20, 4000))
    model = fit_pca(X, 1)
    Xc = X - X.mean(axis=1, keepdims=True)
    eig = np.linalg.eigvalsh(Xc @ Xc.T / (X.shape[1] - 1))
    assert math.isclose(model.explained_fraction, eig[-1] / eig.sum(), rel_tol=1e-9)
    assert abs(model.explained_fraction - 1 / 20) < 0.02


def test_mean_projects_to_zero():
    X = np.random.default_rng(2).random((6, 30))
    model = fit_pca(X, 3)
    np.testing.assert_allclose(pca_project(model, model.mean[:, None]), 0.0, atol=1e-12)


def test_orthonormal_and_sorted():
    X = np.random.default_rng(3).random((12, 50))
    model = fit_pca(X, 8)
    np.testing.assert_allclose(model.components.T @ model.components, np.eye(8), atol=1e-8)
    ev = model.explained_variance
    assert np.all(ev[1:] <= ev[:-1]) and np.all(ev >= 0)


def test_pythagorean_residual():
    X = np.random.default_rng(4).random((15, 60))
    model = fit_pca(X, 5)
    P = pca_project(model, X)
    recon = model.components @ P + model.mean[:, None]
    resid = np.sum((X - recon) ** 2) / (X.shape[1] - 1)
    expected = model.total_variance - model.explained_variance.sum()
    assert math.isclose(resid, expected, rel_tol=1e-6)


def test_identical_columns_identical_projections():
    X = np.random.default_rng(5).random((5, 10))
    X[:, 3] = X[:, 7]
    P = pca_project(fit_pca(X, 3), X)
    np.testing.assert_array_equal(P[:, 3], P[:, 7])


def test_translation_invariance():
    X = np.random.default_rng(6).random((5, 20))
    shift = np.arange(5.0)[:, None]
    a = pca_project(fit_pca(X, 3), X)
    b = pca_project(fit_pca(X + shift, 3), X + shift)
    np.testing.assert_allclose(a, b, atol=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_full_rank_preserves_distances(seed):
    rng = np.random.default_rng(seed)
    n, m = int(rng.integers(2, 8)), int(rng.integers(3, 15))
    X = rng.random((n, m))
    k = min(n, m)
    P = pca_project(fit_pca(X, k), X)
    np.testing.assert_allclose(pdist(P.T), pdist(X.T), atol=1e-8)


@pytest.mark.parametrize("k", [0, 6])
def test_k_out_of_range(k):
    with pytest.raises(ConfigError):
        fit_pca(np.random.default_rng(7).random((5, 9)), k)


def test_project_dimension_mismatch():
    model = fit_pca(np.random.default_rng(8).random((5, 9)), 2)
    with pytest.raises(DataError):
        pca_project(model, np.ones((4, 3)))


def test_projection_file_layout(tmp_path):
    X = np.random.default_rng(9).random((4, 6))
    P = pca_project(fit_pca(X, 2), X)
    write_projections(tmp_path / "p.csv", P, [f"a:{t}" for t in range(6)])
    rows = (tmp_path / "p.csv").read_text().splitlines()
    assert rows[0] == "component," + ",".join(f"a:{t}" for t in range(6))
    assert rows[1].startswith("pc_0,") and len(rows) == 3
