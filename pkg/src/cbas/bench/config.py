"""Experiment configuration: JSON ingestion with defaults, strict key checking and seed derivation."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from ..core import ConfigError

SCENARIOS = ("illustrative-1d", "sequence-design", "q-sweep", "specification-1d")
METHODS = ("cbas", "dbas", "rwr", "cem-pi", "fb")


@dataclass(frozen=True)
class Landscape1D:
    centers: tuple = (-0.3, 5.3)
    widths: tuple = (1.07, 0.47)
    heights: tuple = (2.5, 0.37)
    domain: tuple = (-3.0, 6.0)
    grid_points: int = 4001


@dataclass(frozen=True)
class Oracle1D:
    partial_domain: tuple = (-3.0, 3.45)
    n_partial: int = 10000
    noise_variance: float = 0.05
    holdout_fraction: float = 0.2
    degree_partial: int = 3
    degree_full: int = 5


@dataclass(frozen=True)
class Prior1D:
    mean: float = 0.35
    sd: float = 1.0


@dataclass(frozen=True)
class SequenceLandscape:
    length: int = 20
    alphabet_size: int = 20
    site_sd: float = 0.3
    epistasis: float = 0.0
    pair_sd: float = 0.02
    mutation_rate: float = 0.1
    constant: float = 1.0
    diminishing: float = 1.0


@dataclass(frozen=True)
class SequenceData:
    pool_size: int = 25000
    training_size: int = 1000
    truncation_percentile: float = 0.2
    label_noise_sd: float = 0.05
    ensemble_sizes: tuple = (1, 5, 20)
    prior_smoothing: float = 0.1
    search_smoothing: float = 0.02


@dataclass(frozen=True)
class Specification1D:
    anchor_x: float = 1.0       # y0 is the full-domain oracle mean at this point
    Q: float = 1.0


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str = "sequence-design"
    master_seed: int = 0
    methods: tuple = METHODS
    seeds: tuple = (0, 1, 2)
    Q: float = 1.0
    q_values: tuple = (0.5, 0.75, 1.0)
    q_band: float = 0.15
    M: int = 100
    budget: int = 10000
    iterations: int = 50
    out_dir: str = "results"
    landscape_1d: Landscape1D = field(default_factory=Landscape1D)
    oracle_1d: Oracle1D = field(default_factory=Oracle1D)
    prior_1d: Prior1D = field(default_factory=Prior1D)
    landscape: SequenceLandscape = field(default_factory=SequenceLandscape)
    data: SequenceData = field(default_factory=SequenceData)
    specification: Specification1D = field(default_factory=Specification1D)

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; expected one of {', '.join(SCENARIOS)}")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ConfigError(f"unknown methods {bad}")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if not 0 < self.Q <= 1 or any(not 0 < q <= 1 for q in self.q_values):
            raise ConfigError("quantiles must lie in (0, 1]")
        if self.M < 2 or self.budget < self.M or self.iterations < 1:
            raise ConfigError("need M >= 2, budget >= M and iterations >= 1")
        if self.budget % self.M:
            raise ConfigError("budget must be a multiple of M so every run consumes it exactly")
        d = self.data
        if d.pool_size * d.truncation_percentile < d.training_size:
            raise ConfigError("insufficient pool: pool_size * truncation_percentile < training_size")
        if any(k < 1 for k in d.ensemble_sizes):
            raise ConfigError("ensemble sizes must be >= 1")
        lo, hi = self.landscape_1d.domain
        plo, phi = self.oracle_1d.partial_domain
        if not (lo <= plo < phi < hi):
            raise ConfigError("partial training domain must sit strictly inside the 1D domain")
        if self.prior_1d.sd <= 0:
            raise ConfigError("prior sd must be positive")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


def _build(cls, doc, where: str):
    if not isinstance(doc, dict):
        raise ConfigError(f"{where or 'config'} must be a JSON object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - set(fields))
    if unknown:
        raise ConfigError(f"unknown config keys {unknown} in {where or 'top level'}")
    defaults = cls()
    kwargs = {}
    for name, value in doc.items():
        default = getattr(defaults, name)
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, f"{where}.{name}".lstrip("."))
        elif isinstance(default, tuple):
            if not isinstance(value, list):
                raise ConfigError(f"{where}.{name} must be a list".lstrip("."))
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def config_from_dict(doc: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, doc, "")


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from exc
    return config_from_dict(doc)


def derive_seed(master_seed: int, *parts) -> int:
    """64-bit seed from a hash of the master seed and a cell label.

    Each (method, oracle, run) cell owns its own stream, so running cells in
    any order or in parallel gives the same numbers.
    """
    label = "|".join(str(p) for p in (master_seed, *parts))
    return int.from_bytes(hashlib.sha256(label.encode()).digest()[:8], "little")
