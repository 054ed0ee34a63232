"""Synthetic peak-hour datasets on a directed grid network.

Each link's traffic index follows ``1 - depth(link) * bump(t) + noise``,
clamped to [0, 1]. ``depth`` encodes the scenario geometry:

* ITD -- light, isotropic congestion in and around the center,
* ATD -- congestion in the center and the northern band, with a
  per-sequence severity multiplier,
* ETD -- network-wide background congestion, heavier in center and north,
  that does not relax after the peak.

``bump`` is a raised-cosine rise to the peak step followed by a raised-cosine
relaxation (ITD, ATD) or a plateau (ETD).
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .domain import (NetworkTopology, Scenario, SequenceInfo, SequenceManifest,
                     TrafficStateMatrix, save_dataset)
from .errors import ConfigError

CENTER = np.array([0.5, 0.5])


@dataclass(frozen=True)
class GeneratorConfig:
    grid_rows: int = 16
    grid_cols: int = 16
    n_steps: int = 48
    step_minutes: float = 15.0
    n_itd: int = 37
    n_atd: int = 91
    n_etd: int = 18
    seed: int = 0
    noise_std: float = 0.02
    depth_itd: float = 0.35
    depth_atd: float = 0.55
    depth_etd: float = 0.8
    etd_background: float = 0.35     # fraction of depth_etd applied everywhere
    peak_step: float = 24.0
    etd_peak_step: float = 18.0
    relax_steps: float = 24.0
    etd_plateau: float = 0.9
    peak_jitter: float = 1.5
    itd_severity: tuple[float, float] = (0.85, 1.15)
    atd_severity: tuple[float, float] = (0.8, 1.3)
    etd_severity: tuple[float, float] = (0.9, 1.1)
    spatial_jitter: float = 0.2
    decimals: int | None = 4

    def __post_init__(self):
        if self.grid_rows < 3 or self.grid_cols < 3:
            raise ConfigError("grid must be at least 3 x 3")
        if self.n_steps < 2:
            raise ConfigError("n_steps must be >= 2")
        if min(self.n_itd, self.n_atd, self.n_etd) < 1:
            raise ConfigError("every scenario needs at least one sequence")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be >= 0")
        for name in ("depth_itd", "depth_atd", "depth_etd", "etd_background"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must be in (0, 1)")
        if not 0 < self.peak_step < self.n_steps - 1 or not 0 < self.etd_peak_step < self.n_steps - 1:
            raise ConfigError("peak steps must fall inside the sequence")
        if self.relax_steps <= 0:
            raise ConfigError("relax_steps must be > 0")
        for name in ("itd_severity", "atd_severity", "etd_severity"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise ConfigError(f"{name} must be an increasing positive range")

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def counts(self) -> dict[Scenario, int]:
        return {Scenario.ITD: self.n_itd, Scenario.ATD: self.n_atd, Scenario.ETD: self.n_etd}


@dataclass(frozen=True)
class GridNetwork:
    topology: NetworkTopology
    midpoints: np.ndarray       # n x 2, (x east, y north) in [0, 1]^2
    tail: np.ndarray            # junction index each link leaves
    head: np.ndarray            # junction index each link enters


def build_grid(config: GeneratorConfig) -> GridNetwork:
    """Grid of junctions joined by one-way link pairs.

    Link k enters junction ``head[k]``; its downstream neighbors leave that
    junction, its upstream neighbors enter ``tail[k]``. The reverse twin
    (a U-turn) is excluded from both lists.
    """
    R, C = config.grid_rows, config.grid_cols
    coords = np.array([(c / (C - 1), 1.0 - r / (R - 1)) for r in range(R) for c in range(C)])
    tails, heads = [], []
    for r in range(R):
        for c in range(C):
            a = r * C + c
            for b in ([a + 1] if c + 1 < C else []) + ([a + C] if r + 1 < R else []):
                tails += [a, b]
                heads += [b, a]
    tail = np.array(tails)
    head = np.array(heads)
    n = tail.size
    out_of = [[] for _ in range(R * C)]
    into = [[] for _ in range(R * C)]
    for k in range(n):
        out_of[tail[k]].append(k)
        into[head[k]].append(k)
    upstream, downstream = [], []
    for k in range(n):
        upstream.append(tuple(j for j in into[tail[k]] if tail[j] != head[k]))
        downstream.append(tuple(j for j in out_of[head[k]] if head[j] != tail[k]))
    topo = NetworkTopology(tuple(upstream), tuple(downstream), tuple(str(k) for k in range(n)))
    mid = (coords[tail] + coords[head]) / 2.0
    return GridNetwork(topo, mid, tail, head)


def generate_topology(config: GeneratorConfig | None = None) -> NetworkTopology:
    return build_grid(config or GeneratorConfig()).topology


def _smooth_step(x, width=0.05):
    return 1.0 / (1.0 + np.exp(-x / width))


def region_masks(midpoints: np.ndarray) -> dict[str, np.ndarray]:
    """Soft memberships in the center disc, the wider ring and the north band."""
    x, y = midpoints[:, 0], midpoints[:, 1]
    r = np.linalg.norm(midpoints - CENTER, axis=1)
    north = _smooth_step(y - 0.72) * _smooth_step(0.35 - np.abs(x - 0.5))
    return {
        "center": _smooth_step(0.22 - r),
        "ring": _smooth_step(0.38 - r),
        "north": north,
    }


def scenario_depth(midpoints: np.ndarray, scenario: Scenario, config: GeneratorConfig) -> np.ndarray:
    """Peak congestion depth per link before per-sequence variation."""
    reg = region_masks(midpoints)
    if scenario is Scenario.ITD:
        return config.depth_itd * reg["ring"]
    if scenario is Scenario.ATD:
        return config.depth_atd * np.maximum(reg["center"], reg["north"])
    heavy = np.maximum(_smooth_step(0.3 - np.linalg.norm(midpoints - CENTER, axis=1)), reg["north"])
    return config.depth_etd * np.maximum(config.etd_background, heavy)


def bump(t: np.ndarray, peak: float, relax: float, plateau: float | None = None) -> np.ndarray:
    """Raised-cosine rise from 0 at t=0 to 1 at ``peak``; afterwards either
    a raised-cosine decay to 0 over ``relax`` steps or, with ``plateau``, a
    decay to that level over the same span that then holds."""
    t = np.asarray(t, dtype=float)
    rise = 0.5 * (1.0 - np.cos(np.pi * np.clip(t / peak, 0.0, 1.0)))
    frac = np.clip((t - peak) / relax, 0.0, 1.0)
    fall = 0.5 * (1.0 + np.cos(np.pi * frac))
    if plateau is not None:
        fall = plateau + (1.0 - plateau) * fall
    return np.where(t <= peak, rise, fall)


def _spatial_field(midpoints, rng, n_blobs=4, width=0.15):
    centers = rng.random((n_blobs, 2))
    amps = rng.standard_normal(n_blobs)
    d2 = ((midpoints[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    field = (amps[None, :] * np.exp(-d2 / (2 * width ** 2))).sum(axis=1)
    peak = np.abs(field).max()
    return field / peak if peak > 0 else field


def generate_sequence(network: GridNetwork | NetworkTopology, scenario: Scenario,
                      config: GeneratorConfig, seq_seed) -> np.ndarray:
    """One n x n_steps block of traffic indexes."""
    if isinstance(network, NetworkTopology):
        network = build_grid(config)
    scenario = Scenario(scenario)
    rng = np.random.default_rng(seq_seed)
    lo, hi = {
        Scenario.ITD: config.itd_severity,
        Scenario.ATD: config.atd_severity,
        Scenario.ETD: config.etd_severity,
    }[scenario]
    severity = rng.uniform(lo, hi)
    jitter = rng.uniform(-config.peak_jitter, config.peak_jitter)
    field = _spatial_field(network.midpoints, rng)
    depth = scenario_depth(network.midpoints, scenario, config) * severity
    depth = np.clip(depth * (1.0 + config.spatial_jitter * field), 0.0, 1.0)

    t = np.arange(config.n_steps, dtype=float)
    if scenario is Scenario.ETD:
        profile = bump(t, config.etd_peak_step + jitter, config.relax_steps, config.etd_plateau)
    else:
        profile = bump(t, config.peak_step + jitter, config.relax_steps)
    block = 1.0 - depth[:, None] * profile[None, :]
    if config.noise_std > 0:
        scale = config.noise_std * (0.2 + 0.8 * profile)
        block += rng.standard_normal(block.shape) * scale[None, :]
    block = np.clip(block, 0.0, 1.0)
    if config.decimals is not None:
        block = np.round(block, config.decimals)
    return block


def generate_dataset(config: GeneratorConfig | None = None, out_dir=None):
    """All sequences of all scenarios.

    Returns ``(matrix, manifest, topology)``; with ``out_dir`` the dataset
    files (including ``ground_truth.csv``) are written there as well.
    """
    config = config or GeneratorConfig()
    network = build_grid(config)
    plan = [(sc, k) for sc, count in config.counts().items() for k in range(count)]
    seeds = np.random.SeedSequence(config.seed).spawn(len(plan))
    blocks, infos, index = [], [], []
    for (scenario, k), ss in zip(plan, seeds):
        sid = f"{scenario.value}_{k:03d}"
        blocks.append(generate_sequence(network, scenario, config, ss))
        infos.append(SequenceInfo(sid, scenario, config.n_steps, f"{sid}.csv"))
        index.extend((sid, t) for t in range(config.n_steps))
    matrix = TrafficStateMatrix(np.hstack(blocks), tuple(index))
    manifest = SequenceManifest(tuple(infos), config.step_minutes)
    if out_dir is not None:
        save_dataset(Path(out_dir), matrix, manifest, network.topology)
    return matrix, manifest, network.topology
