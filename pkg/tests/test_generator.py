import numpy as np
import pytest

from lpnmf_traffic.domain import Scenario, load_dataset, load_ground_truth
from lpnmf_traffic.errors import ConfigError
from lpnmf_traffic.generator import (GeneratorConfig, build_grid, bump, generate_dataset,
                                     generate_sequence, generate_topology)

from conftest import SMALL_GEN


def test_three_by_three_grid_has_24_links():
    topo = generate_topology(GeneratorConfig(grid_rows=3, grid_cols=3))
    assert topo.n_links == 24


def test_default_grid_size():
    # 2 directions x (16*15 horizontal + 15*16 vertical) edges
    assert generate_topology().n_links == 960


def test_interior_links_have_neighbors_and_no_self():
    net = build_grid(GeneratorConfig(grid_rows=5, grid_cols=5))
    topo = net.topology
    interior = np.all((net.midpoints > 0) & (net.midpoints < 1), axis=1)
    for k in np.flatnonzero(interior):
        assert topo.upstream[k] and topo.downstream[k]
    for k in range(topo.n_links):
        assert k not in topo.upstream[k] and k not in topo.downstream[k]


def test_no_u_turns():
    net = build_grid(GeneratorConfig(grid_rows=4, grid_cols=4))
    for k, downs in enumerate(net.topology.downstream):
        for j in downs:
            assert net.tail[j] == net.head[k]
            assert net.head[j] != net.tail[k]


def test_bump_shape():
    t = np.arange(48.0)
    b = bump(t, 24, 24)
    assert b[0] == 0.0 and b[24] == 1.0 and b[-1] < 0.01
    assert np.all(np.diff(b[:25]) >= 0) and np.all(np.diff(b[24:]) <= 0)
    p = bump(t, 18, 24, plateau=0.9)
    assert p[18] == 1.0 and np.all(p[18:] >= 0.9) and np.isclose(p[-1], 0.9)


def test_itd_starts_near_free_flow():
    cfg = GeneratorConfig()
    seq = generate_sequence(build_grid(cfg), Scenario.ITD, cfg, 11)
    assert seq[:, 0].min() >= 0.95


def test_etd_final_step_below_itd():
    cfg = GeneratorConfig()
    net = build_grid(cfg)
    itd = np.mean([generate_sequence(net, Scenario.ITD, cfg, s)[:, -1].mean() for s in range(5)])
    etd = np.mean([generate_sequence(net, Scenario.ETD, cfg, s)[:, -1].mean() for s in range(5)])
    assert etd <= itd - 0.15


def test_noise_free_sequence_reproducible():
    cfg = GeneratorConfig(noise_std=0.0)
    net = build_grid(cfg)
    a = generate_sequence(net, Scenario.ATD, cfg, 3)
    assert np.array_equal(a, generate_sequence(net, Scenario.ATD, cfg, 3))


def test_atd_severity_varies_per_sequence():
    cfg = GeneratorConfig(noise_std=0.0)
    net = build_grid(cfg)
    depths = [1 - generate_sequence(net, Scenario.ATD, cfg, s)[:, 24].min() for s in range(6)]
    assert np.ptp(depths) > 0.05


def test_small_dataset_counts_and_range(tmp_path):
    matrix, manifest, topo = generate_dataset(SMALL_GEN, tmp_path)
    assert matrix.m == 12 * SMALL_GEN.n_steps
    counts = {sc: sum(s.scenario is sc for s in manifest.sequences) for sc in Scenario}
    assert counts == {Scenario.ITD: 4, Scenario.ATD: 5, Scenario.ETD: 3}
    assert matrix.values.min() >= 0 and matrix.values.max() <= 1
    m2, man2, topo2 = load_dataset(tmp_path)
    assert np.array_equal(m2.values, matrix.values) and man2 == manifest and topo2 == topo
    assert len(load_ground_truth(tmp_path / "ground_truth.csv")) == 12


def test_seed_changes_data_deterministically():
    a, _, _ = generate_dataset(SMALL_GEN)
    b, _, _ = generate_dataset(SMALL_GEN)
    c, _, _ = generate_dataset(GeneratorConfig(**{**SMALL_GEN.__dict__, "seed": 2}))
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)


@pytest.mark.slow
def test_default_dataset_shape_and_properties():
    matrix, manifest, topo = generate_dataset()
    assert len(manifest.sequences) == 146 and manifest.n_steps == 48 and matrix.m == 7008
    counts = {sc: sum(s.scenario is sc for s in manifest.sequences) for sc in Scenario}
    assert counts == {Scenario.ITD: 37, Scenario.ATD: 91, Scenario.ETD: 18}
    steps = matrix.steps()
    scen = np.array([manifest.scenario_of(s).value for s, _ in matrix.column_index])
    peak = (steps >= 18) & (steps <= 40)
    means = {s: matrix.values[:, peak & (scen == s)].mean() for s in ("ITD", "ATD", "ETD")}
    assert means["ETD"] < means["ATD"] < means["ITD"]
    # adjacent links correlate at the peak step
    at_peak = matrix.values[:, steps == 24]
    pairs = [(k, j) for k in range(topo.n_links) for j in topo.downstream[k]]
    a = at_peak[[k for k, _ in pairs]].ravel()
    b = at_peak[[j for _, j in pairs]].ravel()
    assert np.corrcoef(a, b)[0, 1] >= 0.5


@pytest.mark.parametrize("kw", [{"grid_rows": 2}, {"n_itd": 0}, {"noise_std": -0.1},
                                {"depth_atd": 1.0}, {"peak_step": 60}, {"atd_severity": (1.2, 0.8)}])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        GeneratorConfig(**kw)
