"""Flat ``section.key = value`` pipeline configuration."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

__all__ = [
    "ConfigError",
    "DiscoveryConfig",
    "EstimandConfig",
    "SlConfig",
    "SensitivityConfig",
    "SimulateConfig",
    "BenchmarkConfig",
    "PipelineConfig",
    "parse_config",
    "load_config",
]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DiscoveryConfig:
    test: str = "fisher_z"
    alpha: float = 0.01
    runs: int = 50
    threshold: float = 0.5
    max_cond_size: int = 3
    columns: tuple[str, ...] | None = None
    knn_k: int = 5
    knn_permutations: int = 200


@dataclass(frozen=True)
class EstimandConfig:
    treatment: str | None = None
    outcome: str | None = None
    contrasts: tuple[tuple[float, float], ...] = ()
    # "graph" derives the set from the graph file; otherwise an explicit list
    confounders: str | tuple[str, ...] = "graph"
    precision: str | tuple[str, ...] = "graph"
    censoring_parents: str | tuple[str, ...] | None = None


@dataclass(frozen=True)
class SlConfig:
    learners: tuple[str, ...] = ("intercept_only", "linear_ridge(1.0)", "logistic_ridge(1.0)", "knn(25)", "boosted_stumps(100,1,0.1)")
    folds: int = 10
    # defaults to ``learners`` when unset
    propensity_learners: tuple[str, ...] | None = None


@dataclass(frozen=True)
class SensitivityConfig:
    multipliers: tuple[float, ...] = (0.0, 0.5, 1.0, 1.5, 2.0, 2.5)
    drop_precision: bool = False


@dataclass(frozen=True)
class SimulateConfig:
    scm: Path | None = None
    n: int = 1000


@dataclass(frozen=True)
class BenchmarkConfig:
    scm: Path | None = None
    nodes: int = 9
    edges: int = 9
    sample_sizes: tuple[int, ...] = (100, 250, 500, 1000, 2000)
    reps: int = 20
    tests: tuple[str, ...] = ("fisher_z",)
    alpha: float = 0.01


@dataclass(frozen=True)
class PipelineConfig:
    source: Path
    digest: str
    seed: int = 0
    output_dir: Path = Path("out")
    data: Path | None = None
    schema: Path | str = "auto"
    censor: tuple[str, ...] = ()
    graph: Path | None = None
    constraints: Path | None = None
    discovery: DiscoveryConfig = field(default_factory=DiscoveryConfig)
    estimand: EstimandConfig = field(default_factory=EstimandConfig)
    sl: SlConfig = field(default_factory=SlConfig)
    sensitivity: SensitivityConfig = field(default_factory=SensitivityConfig)
    simulate: SimulateConfig = field(default_factory=SimulateConfig)
    benchmark: BenchmarkConfig = field(default_factory=BenchmarkConfig)

    def require(self, key: str):
        section, _, name = key.partition(".")
        value = getattr(self, section) if not name else getattr(getattr(self, section), name)
        if value is None or value == ():
            raise ConfigError(f"missing required key {key!r}")
        return value


def _list(v: str, sep: str = ",") -> tuple[str, ...]:
    return tuple(s.strip() for s in v.split(sep) if s.strip())


def _bool(v: str) -> bool:
    if v.lower() in ("true", "yes", "1"):
        return True
    if v.lower() in ("false", "no", "0"):
        return False
    raise ValueError(f"expected true/false, got {v!r}")


def _contrasts(v: str):
    out = []
    for item in _list(v):
        a, sep, b = item.partition(":")
        if not sep:
            raise ValueError(f"contrast {item!r} must look like t:t'")
        out.append((float(a), float(b)))
    return tuple(out)


def _set_or_list(v: str):
    v = v.strip()
    if v in ("graph", "inherit"):
        return v
    if v in ("none", ""):
        return ()
    return _list(v)


# key -> (section, field, converter); "path" values are resolved against the config file
_KEYS = {
    "seed": (None, "seed", int),
    "output.dir": (None, "output_dir", "path"),
    "data.path": (None, "data", "path"),
    "data.schema": (None, "schema", "path_or_auto"),
    "data.censor": (None, "censor", _list),
    "graph.path": (None, "graph", "path"),
    "discovery.constraints": (None, "constraints", "path"),
    "discovery.test": ("discovery", "test", str),
    "discovery.alpha": ("discovery", "alpha", float),
    "discovery.runs": ("discovery", "runs", int),
    "discovery.threshold": ("discovery", "threshold", float),
    "discovery.max_cond_size": ("discovery", "max_cond_size", int),
    "discovery.columns": ("discovery", "columns", _list),
    "discovery.knn_k": ("discovery", "knn_k", int),
    "discovery.knn_permutations": ("discovery", "knn_permutations", int),
    "estimand.treatment": ("estimand", "treatment", str),
    "estimand.outcome": ("estimand", "outcome", str),
    "estimand.contrasts": ("estimand", "contrasts", _contrasts),
    "estimand.confounders": ("estimand", "confounders", _set_or_list),
    "estimand.precision": ("estimand", "precision", _set_or_list),
    "estimand.censoring_parents": ("estimand", "censoring_parents", _set_or_list),
    "sl.learners": ("sl", "learners", lambda v: _list(v, ";")),
    "sl.folds": ("sl", "folds", int),
    "sl.propensity_learners": ("sl", "propensity_learners", lambda v: _list(v, ";")),
    "sensitivity.multipliers": ("sensitivity", "multipliers", lambda v: tuple(float(x) for x in _list(v))),
    "sensitivity.drop_precision": ("sensitivity", "drop_precision", _bool),
    "simulate.scm": ("simulate", "scm", "path"),
    "simulate.n": ("simulate", "n", int),
    "benchmark.scm": ("benchmark", "scm", "path"),
    "benchmark.nodes": ("benchmark", "nodes", int),
    "benchmark.edges": ("benchmark", "edges", int),
    "benchmark.sample_sizes": ("benchmark", "sample_sizes", lambda v: tuple(int(x) for x in _list(v))),
    "benchmark.reps": ("benchmark", "reps", int),
    "benchmark.tests": ("benchmark", "tests", _list),
    "benchmark.alpha": ("benchmark", "alpha", float),
}

_SECTIONS = {
    "discovery": DiscoveryConfig,
    "estimand": EstimandConfig,
    "sl": SlConfig,
    "sensitivity": SensitivityConfig,
    "simulate": SimulateConfig,
    "benchmark": BenchmarkConfig,
}


def parse_config(text: str, base: Path = Path("."), source: Path = Path("<string>")) -> PipelineConfig:
    top: dict = {}
    sections: dict = {name: {} for name in _SECTIONS}
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        if key not in _KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        seen.add(key)
        section, name, conv = _KEYS[key]
        try:
            if conv == "path":
                val = (base / value).resolve() if value else None
            elif conv == "path_or_auto":
                val = "auto" if value == "auto" else (base / value).resolve()
            else:
                val = conv(value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from None
        (top if section is None else sections[section])[name] = val
    built = {}
    for name, cls in _SECTIONS.items():
        try:
            built[name] = cls(**sections[name])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"section {name!r}: {exc}") from None
    digest = hashlib.sha256(text.encode("utf-8")).hexdigest()
    cfg = PipelineConfig(source=source, digest=digest, **top, **built)
    _validate(cfg)
    return cfg


def _validate(cfg: PipelineConfig) -> None:
    d = cfg.discovery
    if not 0 < d.alpha < 1:
        raise ConfigError("discovery.alpha must lie in (0, 1)")
    if d.runs < 1:
        raise ConfigError("discovery.runs must be at least 1")
    if not 0 <= d.threshold < 1:
        raise ConfigError("discovery.threshold must lie in [0, 1)")
    if cfg.sl.folds < 2:
        raise ConfigError("sl.folds must be at least 2")
    if not cfg.sl.learners:
        raise ConfigError("sl.learners is empty")
    if any(m < 0 for m in cfg.sensitivity.multipliers):
        raise ConfigError("sensitivity.multipliers must be non-negative")
    cp = cfg.estimand.censoring_parents
    if cfg.censor and cp is None:
        raise ConfigError("estimand.censoring_parents is required when data.censor is set (inherit or a list)")
    if cp == "graph":
        raise ConfigError("estimand.censoring_parents must be 'inherit' or a list")
    for key in ("confounders", "precision"):
        if getattr(cfg.estimand, key) == "inherit":
            raise ConfigError(f"estimand.{key} must be 'graph', 'none' or a list")


def load_config(path) -> PipelineConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, path.parent.resolve(), path)
