"""Run configuration: nested dataclasses loaded from YAML, strict about keys.

Defaults follow the published setup (900/100/500 source dialogs per domain,
hidden and embedding size 50, dropout 0.5, learning rate 0.003, batch 32,
lr halving on validation increase, ten runs).  ``configs/desk.yaml`` in the
package holds the reduced desk-scale experiment.

Every run is reproducible from (config, root seed).  The root seed is split
into named streams so that components can be re-run independently:
``datagen`` (dialog seeds), ``init`` (parameter initialization),
``batching`` (example order) and ``dropout`` (dropout masks).
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import types
import typing
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import yaml

from .model import ModelConfig
from .seeding import STREAMS, stream_rng, stream_seed  # noqa: F401  (re-exported)
from .simdial import ComplexityConfig
from .training import TrainConfig

SPLIT_OFFSETS = {"train": 0, "val": 100_000, "test": 200_000, "adapt": 300_000}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PathsConfig:
    data_dir: str = "data"
    checkpoint_dir: str = "checkpoints"
    report_dir: str = "reports"
    embeddings: str | None = None


@dataclass(frozen=True)
class DomainsConfig:
    source: tuple[str, ...] = ("restaurant", "weather", "bus")
    target: str = "movie"
    kb_size: int = 100
    kb_seed: int = 0


@dataclass(frozen=True)
class SizesConfig:
    source_train: int = 900
    source_val: int = 100
    source_test: int = 500
    target_adapt: tuple[int, ...] = (1, 9, 45, 90)
    target_val: int = 100
    target_test: int = 500


@dataclass(frozen=True)
class MetaSection:
    alpha: float = 0.003
    beta: float = 0.003
    inner_steps: int = 1
    second_order: bool = False


@dataclass(frozen=True)
class ExperimentSection:
    seeds: tuple[int, ...] = tuple(range(10))
    compare_size: int = 9
    transfer_adapt_sizes: tuple[int, ...] = (9,)
    eval_batch: int = 64
    rollout: bool = False


@dataclass(frozen=True)
class RunConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    domains: DomainsConfig = field(default_factory=DomainsConfig)
    sizes: SizesConfig = field(default_factory=SizesConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    meta: MetaSection = field(default_factory=MetaSection)
    adapt: TrainConfig = field(default_factory=TrainConfig)
    complexity: ComplexityConfig = field(default_factory=ComplexityConfig)
    experiment: ExperimentSection = field(default_factory=ExperimentSection)

    def validate(self) -> "RunConfig":
        d, s = self.domains, self.sizes
        if len(d.source) < 2:
            raise ConfigError("at least two source domains are required")
        if d.target in d.source:
            raise ConfigError(f"target domain {d.target!r} is also a source domain")
        for name in ("source_train", "source_val", "source_test", "target_val", "target_test"):
            if getattr(s, name) < 1:
                raise ConfigError(f"sizes.{name} must be positive")
        if not s.target_adapt or min(s.target_adapt) < 1:
            raise ConfigError("sizes.target_adapt must list positive sizes")
        e = self.experiment
        for n in (e.compare_size, *e.transfer_adapt_sizes):
            if n not in s.target_adapt:
                raise ConfigError(f"adaptation size {n} is not among sizes.target_adapt {list(s.target_adapt)}")
        if not e.seeds:
            raise ConfigError("experiment.seeds is empty")
        if not (self.meta.alpha > 0 and self.meta.beta > 0):
            raise ConfigError("meta.alpha and meta.beta must be positive")
        if self.meta.inner_steps != 1:
            raise ConfigError("meta.inner_steps must be 1")
        if self.meta.second_order:
            raise ConfigError("meta.second_order is reserved; only the first-order mode is implemented")
        if self.model.emb_dim < 1 or self.model.hidden < 1 or not 0.0 <= self.model.dropout < 1.0:
            raise ConfigError("model sizes must be positive and dropout in [0, 1)")
        return self

    def to_json(self) -> dict:
        return dataclasses.asdict(self)

    def hash(self) -> str:
        return config_hash(self)


def config_hash(cfg: RunConfig) -> str:
    """sha256 (first 16 hex digits) of the canonical JSON form of ``cfg``."""
    blob = json.dumps(cfg.to_json(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _convert(tp, value, where: str):
    origin = typing.get_origin(tp)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(f"{where}: expected a mapping")
        return _build(tp, value, where)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list")
        inner = typing.get_args(tp)[0]
        return tuple(_convert(inner, v, f"{where}[]") for v in value)
    if origin in (typing.Union, types.UnionType):
        if value is None:
            return None
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        return _convert(args[0], value, where)
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    return value


def _build(cls, data: dict, where: str = "config"):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    kwargs = {k: _convert(hints[k], v, f"{where}.{k}") for k, v in data.items()}
    try:
        return cls(**kwargs)
    except (ValueError, TypeError, NotImplementedError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def config_from_dict(data: dict | None, overrides: dict | None = None) -> RunConfig:
    data = _merge(data or {}, overrides or {})
    return _build(RunConfig, data).validate()


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then the YAML file at ``path`` (if any), then ``overrides``."""
    data = {}
    if path is not None:
        try:
            data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"malformed YAML in {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_dict(data, overrides)


def builtin_config(name: str) -> Path:
    """Path of a config file shipped with the package (e.g. ``desk``)."""
    ref = resources.files("metadial") / "configs" / f"{name}.yaml"
    return Path(str(ref))


def dialog_seed_base(root: int, split: str) -> int:
    """First dialog seed of ``split`` in the datagen stream; splits never overlap."""
    return int(root) * 1_000_000 + SPLIT_OFFSETS[split]
