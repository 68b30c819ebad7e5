"""Pipeline configuration: one JSON document mirroring every default.

Unknown keys are rejected so a stale or misspelled config fails fast.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .seeding import canonical_json, sha256_hex

ALL_METHODS = (
    "plain", "yesno", "sim_yesno", "similarity",
    "sim_trained", "trained", "trained_raw",
)


class ConfigError(ValueError):
    pass


@dataclass
class PrefGenConfig:
    k: int = 4
    trials: int = 5


@dataclass
class TrainSection:
    epochs: int = 200
    lr: float = 1e-3
    batch: int = 32
    val_frac: float = 0.2
    hidden_dim: int = 64
    feature_dim: int = 256


@dataclass
class RetrievalConfig:
    w_text: float = 0.5
    w_vis: float = 0.5
    topk: int = 5
    raw_truncate: int = 64


@dataclass
class EvalConfig:
    repeats: int = 5
    methods: list[str] = field(default_factory=lambda: list(ALL_METHODS))


@dataclass
class CorrelateConfig:
    per_task: int = 2
    trials: int = 5


@dataclass
class Config:
    seed: int = 42
    horizon_per_subtask: int = 50
    prefgen: PrefGenConfig = field(default_factory=PrefGenConfig)
    train: TrainSection = field(default_factory=TrainSection)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    correlate: CorrelateConfig = field(default_factory=CorrelateConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        return sha256_hex(canonical_json(self.to_dict()))[:16]


_SECTIONS = {
    "prefgen": PrefGenConfig,
    "train": TrainSection,
    "retrieval": RetrievalConfig,
    "eval": EvalConfig,
    "correlate": CorrelateConfig,
}


def config_from_dict(data: dict) -> Config:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    cfg = Config()
    known_top = {"seed", "horizon_per_subtask"} | set(_SECTIONS)
    unknown = set(data) - known_top
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "seed" in data:
        cfg.seed = int(data["seed"])
    if "horizon_per_subtask" in data:
        cfg.horizon_per_subtask = int(data["horizon_per_subtask"])
    for name, cls in _SECTIONS.items():
        if name not in data:
            continue
        section_data = data[name]
        if not isinstance(section_data, dict):
            raise ConfigError(f"config section {name!r} must be an object")
        section = getattr(cfg, name)
        valid = set(cls.__dataclass_fields__)
        bad = set(section_data) - valid
        if bad:
            raise ConfigError(f"unknown keys in config section {name!r}: {sorted(bad)}")
        for key, value in section_data.items():
            setattr(section, key, value)
    for m in cfg.eval.methods:
        if m not in ALL_METHODS:
            raise ConfigError(f"unknown eval method {m!r}")
    return cfg


def load_config(path: Path | None, seed_override: int | None = None) -> Config:
    if path is None:
        cfg = Config()
    else:
        cfg = config_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
    if seed_override is not None:
        cfg.seed = seed_override
    return cfg
