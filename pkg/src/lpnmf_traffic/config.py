"""Pipeline configuration: one sectioned ``key = value`` file.

Sections and keys (all optional; unknown keys are rejected)::

    [run]            seed, deterministic
    [dataset]        path
    [similarity]     delta, knn, aggregation, self_weight, cache
    [factorization]  s, lambda, lambda_scale, max_iters, rel_tol, window,
                     epsilon, candidate_s, elbow_threshold, pca, pca_k
    [clustering]     K, candidate_K, n_restarts, max_iters, congestion_threshold,
                     exemplar_fraction, improvement_tol, normalize, top_fraction
    [trajectory]     K, n_restarts, max_iters
    [generator]      any GeneratorConfig field
    [output]         dir

Empty values mean "not set" (automatic delta, no candidate list).
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .clustering import ClusteringConfig
from .errors import ConfigError
from .factorization import FactorizationConfig
from .generator import GeneratorConfig
from .similarity import SimilarityConfig
from .trajectory import TrajectoryConfig

_SEED_MAX = 2 ** 64 - 1


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    deterministic: bool = False
    dataset_path: Path = Path("data")
    output_dir: Path = Path("results")
    similarity: SimilarityConfig = field(default_factory=SimilarityConfig)
    cache_graph: bool = True
    factorization: FactorizationConfig = field(default_factory=FactorizationConfig)
    candidate_s: tuple[int, ...] = ()
    elbow_threshold: float = 0.2
    pca: bool = True
    pca_k: int = 15
    clustering: ClusteringConfig = field(default_factory=ClusteringConfig)
    candidate_K: tuple[int, ...] = (3, 4, 5)
    top_fraction: float = 0.2
    trajectory: TrajectoryConfig = field(default_factory=TrajectoryConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)

    def __post_init__(self):
        if not 0 <= self.seed <= _SEED_MAX:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        for name in ("candidate_s", "candidate_K"):
            vals = list(getattr(self, name))
            if vals != sorted(set(vals)) or any(v < 1 for v in vals):
                raise ConfigError(f"{name} must be strictly ascending positive integers")
        if not 0 < self.elbow_threshold < 1:
            raise ConfigError("elbow_threshold must be in (0, 1)")
        if self.pca_k < 3:
            raise ConfigError("pca_k must be >= 3 (export-viz needs three components)")
        if not 0 < self.top_fraction <= 1:
            raise ConfigError("top_fraction must be in (0, 1]")

    def stage_seed(self, stage: str) -> int:
        """Sub-seed for one analysis stage, derived from the run seed."""
        key = [ord(c) for c in stage]
        return int(np.random.SeedSequence([self.seed, *key]).generate_state(1, np.uint32)[0])

    def with_overrides(self, seed=None, out=None, lam=None, s=None, K=None,
                       deterministic=None) -> "PipelineConfig":
        """Apply command-line flags; flags win over the file."""
        cfg = self
        if seed is not None:
            cfg = replace(cfg, seed=seed, generator=_rebuild(GeneratorConfig, cfg.generator, seed=seed))
        if out is not None:
            cfg = replace(cfg, output_dir=Path(out))
        if lam is not None:
            cfg = replace(cfg, factorization=_rebuild(FactorizationConfig, cfg.factorization, lam=lam))
        if s is not None:
            cfg = replace(cfg, candidate_s=(),
                          factorization=_rebuild(FactorizationConfig, cfg.factorization, s=s))
        if K is not None:
            cfg = replace(cfg, candidate_K=(), clustering=_rebuild(ClusteringConfig, cfg.clustering, K=K))
        if deterministic is not None:
            cfg = replace(cfg, deterministic=deterministic)
        return cfg


def _rebuild(cls, obj, **changes):
    try:
        return replace(obj, **changes)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


# ---------------------------------------------------------------- parsing


def _bool(v: str) -> bool:
    low = v.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _int_list(v: str) -> tuple[int, ...]:
    return tuple(int(x) for x in v.replace(",", " ").split())


def _float_pair(v: str) -> tuple[float, float]:
    parts = [float(x) for x in v.replace(",", " ").split()]
    if len(parts) != 2:
        raise ValueError("expected two numbers")
    return tuple(parts)


def _optional(conv):
    def parse(v: str):
        return None if v.strip().lower() in ("", "none", "auto") else conv(v)
    return parse


def _knn(v: str):
    low = v.strip().lower()
    if low == "auto":
        return "auto"
    if low in ("", "none", "all"):
        return None
    return int(low)


_SIMILARITY = {"delta": _optional(float), "knn": _knn, "aggregation": str, "self_weight": float}
_FACTORIZATION = {"s": int, "lambda": float, "lambda_scale": str, "max_iters": int, "rel_tol": float,
                  "window": int, "epsilon": float}
_CLUSTERING = {"K": int, "n_restarts": int, "max_iters": int, "congestion_threshold": float,
               "exemplar_fraction": float, "improvement_tol": float, "normalize": _bool}
_TRAJECTORY = {"K": int, "n_restarts": int, "max_iters": int}


def _generator_parsers() -> dict:
    out = {}
    for f in fields(GeneratorConfig):
        if f.name.endswith("_severity"):
            out[f.name] = _float_pair
        elif f.name == "decimals":
            out[f.name] = _optional(int)
        elif f.type in ("int", int):
            out[f.name] = int
        else:
            out[f.name] = float
    return out


_EXTRA = {
    "run": {"seed": int, "deterministic": _bool},
    "dataset": {"path": Path},
    "similarity": {"cache": _bool},
    "factorization": {"candidate_s": _int_list, "elbow_threshold": float, "pca": _bool, "pca_k": int},
    "clustering": {"candidate_K": _int_list, "top_fraction": float},
    "trajectory": {},
    "generator": {},
    "output": {"dir": Path},
}
_MODULE = {"similarity": _SIMILARITY, "factorization": _FACTORIZATION, "clustering": _CLUSTERING,
           "trajectory": _TRAJECTORY}


def _read_section(parser, name: str) -> tuple[dict, dict]:
    """(module-config values, pipeline-level values) of one section."""
    module = _generator_parsers() if name == "generator" else _MODULE.get(name, {})
    extra = _EXTRA[name]
    mod_vals, extra_vals = {}, {}
    if not parser.has_section(name):
        return mod_vals, extra_vals
    for key, raw in parser.items(name):
        table = mod_vals if key in module else extra_vals if key in extra else None
        if table is None:
            raise ConfigError(f"[{name}] unknown key {key!r}")
        conv = module.get(key) or extra[key]
        try:
            table[key] = conv(raw)
        except ValueError as exc:
            raise ConfigError(f"[{name}] {key}: {exc}") from None
    return mod_vals, extra_vals


def parse_config(text: str, base_dir: Path | None = None) -> PipelineConfig:
    """Build and validate a PipelineConfig from file contents.

    Relative paths resolve against ``base_dir`` (the config file's folder).
    """
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str        # keys are case-sensitive (K vs k)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    unknown = set(parser.sections()) - set(_EXTRA)
    if unknown:
        raise ConfigError(f"unknown section(s): {sorted(unknown)}")

    sections = {name: _read_section(parser, name) for name in _EXTRA}
    kw = {}

    def resolve(p: Path) -> Path:
        return p if p.is_absolute() or base_dir is None else base_dir / p

    run = sections["run"][1]
    kw.update({k: run[k] for k in ("seed", "deterministic") if k in run})
    if "path" in sections["dataset"][1]:
        kw["dataset_path"] = resolve(sections["dataset"][1]["path"])
    if "dir" in sections["output"][1]:
        kw["output_dir"] = resolve(sections["output"][1]["dir"])

    sim, sim_x = sections["similarity"]
    fac, fac_x = sections["factorization"]
    clu, clu_x = sections["clustering"]
    tra, _ = sections["trajectory"]
    gen, _ = sections["generator"]
    if "lambda" in fac:
        fac["lam"] = fac.pop("lambda")
    seed = kw.get("seed", 0)
    gen.setdefault("seed", seed)
    try:
        kw["similarity"] = SimilarityConfig(**sim)
        kw["factorization"] = FactorizationConfig(**fac)
        kw["clustering"] = ClusteringConfig(**clu)
        kw["trajectory"] = TrajectoryConfig(**tra)
        kw["generator"] = GeneratorConfig(**gen)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    if "cache" in sim_x:
        kw["cache_graph"] = sim_x["cache"]
    for key in ("candidate_s", "elbow_threshold", "pca", "pca_k"):
        if key in fac_x:
            kw[key] = fac_x[key]
    for key in ("candidate_K", "top_fraction"):
        if key in clu_x:
            kw[key] = clu_x[key]
    return PipelineConfig(**kw)


def load_config(path=None) -> PipelineConfig:
    """Read a config file; ``None`` gives the defaults."""
    if path is None:
        return PipelineConfig()
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    return parse_config(text, path.parent)
