"""Run configuration: strict JSON schema, defaults, and shipped presets.

A run config has six blocks (system, grid, model, train, eval, paths). Every
field has a default; unknown keys anywhere are a hard error so typos cannot
silently fall back to defaults. Presets come in two sizes per system: "desk"
(minutes on a CPU; the acceptance scale) and "paper" (the full published
experiment scale, documented as long-running).
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields
from typing import Optional

from .dynamics import SystemSpec, lorenz96, rossler
from .seqmodel import ModelConfig
from .train import TrainConfig


class ConfigError(ValueError):
    """Invalid or unknown configuration content."""


@dataclass
class SystemSection:
    kind: str = "rossler"
    dim: int = 3
    params: dict = field(default_factory=dict)
    count: int = 50
    steps: int = 3000
    tau: float = 0.1
    seed: int = 0
    test_count: int = 20
    test_seed: Optional[int] = None  # defaults to seed + 1
    substeps: int = 10
    burn_in: int = 0
    observation_noise: float = 0.0


@dataclass
class GridSection:
    margin: float = 0.05


@dataclass
class ModelSection:
    layers: int = 4
    heads: int = 4
    embed_dim: int = 128
    context_len: int = 128
    tt_rank: int = 8
    seed: int = 0


@dataclass
class TrainSection:
    schedule: list = field(default_factory=lambda: [2, 3, 5, 9])
    steps_per_stage: object = 250  # int, or one int per schedule entry
    batch_size: int = 16
    seq_len: int = 64
    learning_rate: float = 2e-3
    lr_warmup: int = 25
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.0
    head_refresh: str = "prolong"
    checkpoint_every: int = 0


@dataclass
class EvalSection:
    prefix_len: int = 100
    horizon: int = 400
    n: int = 20
    rollouts: int = 20
    rollout_horizon: int = 600
    div_delta: float = 1e-4
    div_pairs: int = 16
    div_burn_in: int = 500
    div_jitter: float = 0.0
    seed: int = 0


@dataclass
class PathsSection:
    data_dir: str = "data"
    checkpoint_dir: str = "checkpoints"
    report_dir: str = "reports"


_SECTIONS = {
    "system": SystemSection,
    "grid": GridSection,
    "model": ModelSection,
    "train": TrainSection,
    "eval": EvalSection,
    "paths": PathsSection,
}


@dataclass
class RunConfig:
    system: SystemSection = field(default_factory=SystemSection)
    grid: GridSection = field(default_factory=GridSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)
    paths: PathsSection = field(default_factory=PathsSection)

    def to_dict(self) -> dict:
        return {name: dataclasses.asdict(getattr(self, name)) for name in _SECTIONS}


def _section_from_dict(cls, data: dict, where: str):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown key(s) in {where!r}: {sorted(unknown)}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"bad value in {where!r}: {exc}") from exc


def config_from_dict(data: dict) -> RunConfig:
    unknown = set(data) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {sorted(unknown)}")
    sections = {}
    for name, cls in _SECTIONS.items():
        block = data.get(name, {})
        if not isinstance(block, dict):
            raise ConfigError(f"section {name!r} must be an object")
        sections[name] = _section_from_dict(cls, block, name)
    return RunConfig(**sections)


def merge_dicts(base: dict, overlay: dict) -> dict:
    """Recursive merge; overlay values win."""
    out = dict(base)
    for key, value in overlay.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = merge_dicts(out[key], value)
        else:
            out[key] = value
    return out


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------

_ROSSLER_COMMON = {
    "system": {
        "kind": "rossler", "dim": 3,
        "params": {"a": 0.15, "b": 0.2, "c": 10.0},
        "tau": 0.1,
    },
}

_LORENZ_COMMON = {
    "system": {"kind": "lorenz96", "tau": 0.05},
}

PRESETS: dict = {
    # Acceptance-scale runs: minutes on a desktop CPU.
    "rossler-desk": merge_dicts(_ROSSLER_COMMON, {
        "system": {"count": 50, "steps": 3000, "test_count": 20},
        "model": {"layers": 4, "heads": 4, "embed_dim": 128, "context_len": 128, "tt_rank": 8},
        # seq_len == context_len so every positional row is trained
        "train": {"schedule": [2, 3, 5, 9], "steps_per_stage": 250, "batch_size": 8,
                  "seq_len": 128, "learning_rate": 2e-3, "lr_warmup": 25},
        "eval": {"prefix_len": 100, "horizon": 400, "n": 20,
                 "rollouts": 20, "rollout_horizon": 600,
                 "div_delta": 1e-6, "div_pairs": 16, "div_burn_in": 500, "div_jitter": 1.0},
    }),
    "lorenz96-desk": merge_dicts(_LORENZ_COMMON, {
        "system": {"dim": 8, "params": {"forcing": 10.0}, "count": 50, "steps": 3000,
                   "test_count": 20, "burn_in": 250},
        "model": {"layers": 4, "heads": 4, "embed_dim": 128, "context_len": 128, "tt_rank": 8},
        "train": {"schedule": [2, 3, 5, 9], "steps_per_stage": 250, "batch_size": 8,
                  "seq_len": 128, "learning_rate": 2e-3, "lr_warmup": 25},
        "eval": {"prefix_len": 100, "horizon": 400, "n": 20,
                 "rollouts": 20, "rollout_horizon": 400,
                 "div_delta": 1e-4, "div_pairs": 16, "div_burn_in": 500, "div_jitter": 0.1},
    }),
    # Published-experiment scale; long-running, provided for completeness.
    "rossler-paper": merge_dicts(_ROSSLER_COMMON, {
        "system": {"count": 1000, "steps": 10000, "test_count": 20},
        "model": {"layers": 12, "heads": 9, "embed_dim": 729, "context_len": 256, "tt_rank": 16},
        "train": {"schedule": [50], "steps_per_stage": 20000, "batch_size": 16,
                  "seq_len": 256, "learning_rate": 1e-3, "lr_warmup": 200},
        "eval": {"prefix_len": 100, "horizon": 600, "n": 100,
                 "rollouts": 20, "rollout_horizon": 600,
                 "div_delta": 1e-6, "div_pairs": 32, "div_burn_in": 1000, "div_jitter": 1.0},
    }),
    "lorenz96-paper": merge_dicts(_LORENZ_COMMON, {
        "system": {"dim": 16, "params": {"forcing": 10.0}, "count": 1000, "steps": 20000,
                   "test_count": 20},
        "model": {"layers": 12, "heads": 8, "embed_dim": 1024, "context_len": 256, "tt_rank": 16},
        "train": {"schedule": [2, 3, 5, 9, 17, 33], "steps_per_stage": 20000, "batch_size": 16,
                  "seq_len": 256, "learning_rate": 1e-3, "lr_warmup": 200},
        "eval": {"prefix_len": 100, "horizon": 600, "n": 100,
                 "rollouts": 20, "rollout_horizon": 600,
                 "div_delta": 1e-4, "div_pairs": 32, "div_burn_in": 1000, "div_jitter": 0.1},
    }),
}


def _load_config_file(config_path) -> dict:
    try:
        with open(config_path) as fh:
            file_data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {config_path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {config_path} is not valid JSON: {exc}") from exc
    if not isinstance(file_data, dict):
        raise ConfigError("config file must contain a JSON object")
    return file_data


def resolve_config(
    preset: Optional[str] = None,
    config_path=None,
    seed: Optional[int] = None,
) -> RunConfig:
    """Defaults <- preset <- config file <- --seed override, validated strictly."""
    file_data = _load_config_file(config_path) if config_path is not None else {}
    data: dict = {}
    if preset is not None:
        if preset in ("desk", "paper"):
            # bare size: the system comes from the config file (default rossler)
            kind = file_data.get("system", {}).get("kind", "rossler")
            preset = f"{kind}-{preset}"
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; available: {sorted(PRESETS)}")
        data = merge_dicts(data, PRESETS[preset])
    data = merge_dicts(data, file_data)
    if seed is not None:
        data = merge_dicts(data, {
            "system": {"seed": seed}, "model": {"seed": seed}, "train": {"seed": seed},
        })
    return config_from_dict(data)


# ---------------------------------------------------------------------------
# Builders for the module-level configs
# ---------------------------------------------------------------------------

def make_system(cfg: RunConfig) -> SystemSpec:
    s = cfg.system
    try:
        if s.kind == "rossler":
            p = dict(s.params) if s.params else {}
            return rossler(p.get("a", 0.15), p.get("b", 0.2), p.get("c", 10.0))
        if s.kind == "lorenz96":
            p = dict(s.params) if s.params else {}
            return lorenz96(p.get("forcing", 10.0), s.dim)
        raise ConfigError(f"unknown system kind {s.kind!r}")
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def make_model_config(cfg: RunConfig, grid_axis: int) -> ModelConfig:
    m = cfg.model
    try:
        return ModelConfig(
            layers=m.layers, heads=m.heads, embed_dim=m.embed_dim,
            context_len=m.context_len, grid_axis=grid_axis,
            system_dim=cfg.system.dim, tt_rank=m.tt_rank, seed=m.seed,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def make_train_config(cfg: RunConfig) -> TrainConfig:
    t = cfg.train
    try:
        return TrainConfig(
            schedule=list(t.schedule), steps_per_stage=t.steps_per_stage,
            batch_size=t.batch_size, seq_len=t.seq_len,
            learning_rate=t.learning_rate, lr_warmup=t.lr_warmup, seed=t.seed,
            beta1=t.beta1, beta2=t.beta2, epsilon=t.epsilon,
            weight_decay=t.weight_decay, head_refresh=t.head_refresh,
            checkpoint_every=t.checkpoint_every,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def write_resolved(cfg: RunConfig, path) -> None:
    with open(path, "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
