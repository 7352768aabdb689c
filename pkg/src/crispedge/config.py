"""Run configuration and its YAML file format.

Schema (every key optional, unknown keys rejected)::

    net:   NetConfig fields
    loss:  {name: hfl|ft|focal|wce, <LossConfig fields>}
    train: {batch_size, epochs, lr, lr_decay, lr_step, weight_decay, seed, eval_every, min_crop_edges}
    data:  {train_dir, val_dir, out_dir, augment: {rotation_angles, crop_size, horizontal_flip}}
    eval:  {mode, thresholds, tolerance}
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Union

import yaml

from .data import AugmentConfig
from .losses import LOSSES, LossConfig
from .network import NetConfig


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


@dataclass
class TrainConfig:
    batch_size: int = 8
    epochs: int = 40
    lr: float = 1e-4
    lr_decay: float = 0.1
    lr_step: int = 5
    weight_decay: float = 5e-4
    seed: int = 0
    eval_every: int = 1
    min_crop_edges: int = 16

    def __post_init__(self) -> None:
        for name in ("batch_size", "epochs", "lr_step", "eval_every"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name}: must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr: must be > 0")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay: must lie in (0, 1]")
        if self.min_crop_edges < 0:
            raise ValueError("min_crop_edges: must be >= 0")
        if self.weight_decay < 0:
            raise ValueError("weight_decay: must be >= 0")


@dataclass
class LossSection:
    name: str = "hfl"
    params: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self) -> None:
        if self.name not in LOSSES:
            raise ValueError(f"name: unknown loss {self.name!r}; choose from {sorted(LOSSES)}")


@dataclass
class DataConfig:
    train_dir: Optional[str] = None
    val_dir: Optional[str] = None
    out_dir: str = "runs/default"
    augment: AugmentConfig = field(default_factory=lambda: AugmentConfig(crop_size=(40, 40)))


@dataclass
class EvalConfig:
    mode: str = "c-eval"
    thresholds: int = 99
    tolerance: Optional[float] = None

    def __post_init__(self) -> None:
        if self.mode not in ("s-eval", "c-eval"):
            raise ValueError(f"mode: must be s-eval or c-eval, got {self.mode!r}")
        if int(self.thresholds) < 2:
            raise ValueError("thresholds: need at least 2")
        if self.tolerance is not None and self.tolerance < 0:
            raise ValueError("tolerance: must be >= 0")


@dataclass
class RunConfig:
    net: NetConfig = field(default_factory=NetConfig)
    loss: LossSection = field(default_factory=LossSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> Dict[str, Any]:
        return _plain(self)

    @classmethod
    def from_dict(cls, raw: Optional[Dict[str, Any]]) -> "RunConfig":
        raw = raw or {}
        _reject_unknown(raw, {"net", "loss", "train", "data", "eval"}, "")
        net = _build(NetConfig, raw.get("net"), "net")
        loss_raw = dict(raw.get("loss") or {})
        _ensure_mapping(loss_raw, "loss")
        name = loss_raw.pop("name", "hfl")
        loss = _wrap(lambda: LossSection(name, _build(LossConfig, loss_raw, "loss")), "loss")
        train = _build(TrainConfig, raw.get("train"), "train")
        data_raw = dict(raw.get("data") or {})
        _ensure_mapping(data_raw, "data")
        aug = _build(AugmentConfig, data_raw.pop("augment", None), "data.augment") if "augment" in data_raw else None
        data = _build(DataConfig, data_raw, "data")
        if aug is not None:
            data.augment = aug
        ev = _build(EvalConfig, raw.get("eval"), "eval")
        return cls(net, loss, train, data, ev)


def _plain(obj):
    if dataclasses.is_dataclass(obj):
        if isinstance(obj, LossSection):
            out = {"name": obj.name}
            out.update(_plain(obj.params))
            return out
        return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (tuple, list)):
        return [_plain(v) for v in obj]
    return obj


def _ensure_mapping(raw, where: str) -> None:
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(raw).__name__}")


def _reject_unknown(raw: Dict[str, Any], allowed, where: str) -> None:
    _ensure_mapping(raw, where or "config")
    for key in raw:
        if key not in allowed:
            prefix = f"{where}." if where else ""
            raise ConfigError(f"{prefix}{key}: unknown key (allowed: {', '.join(sorted(allowed))})")


def _wrap(fn, where: str):
    try:
        return fn()
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}.{exc}" if ":" in str(exc) else f"{where}: {exc}") from None


def _tuplify(value):
    if isinstance(value, list):
        return tuple(_tuplify(v) for v in value)
    return value


def _build(cls, raw, where: str):
    raw = {} if raw is None else raw
    _reject_unknown(raw, {f.name for f in dataclasses.fields(cls)}, where)
    return _wrap(lambda: cls(**{k: _tuplify(v) for k, v in raw.items()}), where)


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


def parse_config(text: str) -> RunConfig:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from None
    return RunConfig.from_dict(raw)


def load_config(path: Union[str, Path]) -> RunConfig:
    return parse_config(Path(path).read_text())


def save_config(cfg: RunConfig, path: Union[str, Path]) -> None:
    Path(path).write_text(dump_config(cfg))
