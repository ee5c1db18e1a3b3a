"""Experiment configuration: one JSON file per run, validated on load.

Every section is a dataclass. Loading rejects unknown keys and values of the
wrong type, so a typo fails loudly instead of silently falling back to a
default.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

from .encoders import VARIANTS, EncoderTrainConfig
from .lm import DecodeSettings
from .metrics.probes import ProbeConfig
from .projection import LimberTrainConfig
from .world import WorldConfig


class SchemaError(ValueError):
    pass


@dataclass
class DataConfig:
    n_train: int = 50000
    n_val: int = 2000
    n_test: int = 1000
    lm_docs: int = 50000


@dataclass
class LmSection:
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 256
    context_len: int = 128
    dropout: float = 0.1
    steps: int = 3000
    batch_size: int = 32
    lr: float = 3e-3
    warmup: int = 100
    weight_decay: float = 0.01
    betas: tuple = (0.9, 0.95)
    clip: float = 1.0


def _encoder_defaults() -> dict[str, EncoderTrainConfig]:
    out = {v: EncoderTrainConfig() for v in VARIANTS}
    # the two language-supervised backbones are wider and trained longer
    out["contrastive"] = EncoderTrainConfig(steps=6000, batch_size=256, hidden=256)
    out["classifier"] = EncoderTrainConfig(steps=8000, hidden=256)
    return out


@dataclass
class LimberSection:
    steps: int = 3000
    batch_size: int = 32
    lr: float = 8e-4
    lr_encoder: float | None = None
    betas: tuple = (0.9, 0.95)
    weight_decay: float = 0.0
    dropout: float = 0.1
    clip: float = 1.0
    paired: float = 0.0
    tune_encoder: bool = False

    def __post_init__(self):
        self.train_config(0)  # validates the values

    def train_config(self, seed: int) -> LimberTrainConfig:
        return LimberTrainConfig(steps=self.steps, batch_size=self.batch_size, lr=self.lr,
                                 lr_encoder=self.lr_encoder, betas=tuple(self.betas),
                                 weight_decay=self.weight_decay, dropout=self.dropout, clip=self.clip,
                                 paired=self.paired, seed=seed)


@dataclass
class VqaSection:
    shots: tuple = (0, 1, 2, 4)
    n_questions: int = 500
    pool_size: int = 500
    max_len: int = 3


@dataclass
class MetricsSection:
    cider_sigma: float = 6.0
    cider_scale: float = 10.0
    contrastive_w: float = 2.5
    lexicon_top: int = 50
    purity_k: int = 10
    top_confusions: int = 10


@dataclass
class ExperimentConfig:
    seed: int = 0
    variants: tuple = VARIANTS
    world: WorldConfig = field(default_factory=WorldConfig)
    data: DataConfig = field(default_factory=DataConfig)
    lm: LmSection = field(default_factory=LmSection)
    encoders: dict = field(default_factory=_encoder_defaults)
    limber: LimberSection = field(default_factory=LimberSection)
    decode: DecodeSettings = field(default_factory=DecodeSettings)
    vqa: VqaSection = field(default_factory=VqaSection)
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    metrics: MetricsSection = field(default_factory=MetricsSection)

    def __post_init__(self):
        bad = [v for v in self.variants if v not in VARIANTS]
        if bad:
            raise SchemaError(f"unknown encoder variants {bad}")
        self.variants = tuple(self.variants)

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        return _build(cls, data, "config")

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: not valid JSON ({exc})") from exc
        if not isinstance(data, dict):
            raise SchemaError(f"{path}: top level must be an object")
        return cls.from_dict(data)


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _check_scalar(value: Any, default: Any, where: str) -> Any:
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise SchemaError(f"{where}: expected true/false")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise SchemaError(f"{where}: expected an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise SchemaError(f"{where}: expected a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise SchemaError(f"{where}: expected a string")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, list):
            raise SchemaError(f"{where}: expected a list")
        if default:
            return tuple(_check_scalar(v, default[0], f"{where}[{i}]") for i, v in enumerate(value))
        return tuple(value)
    return value


def _build(cls, data: Any, where: str):
    if not isinstance(data, dict):
        raise SchemaError(f"{where}: expected an object")
    defaults = cls()
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    unknown = sorted(set(data) - names)
    if unknown:
        raise SchemaError(f"{where}: unknown keys {unknown}")
    kwargs = {}
    for name in names:
        if name not in data:
            continue
        cur = getattr(defaults, name)
        sub = f"{where}.{name}"
        if dataclasses.is_dataclass(cur):
            kwargs[name] = _build(type(cur), data[name], sub)
        elif name == "encoders" and cls is ExperimentConfig:
            if not isinstance(data[name], dict):
                raise SchemaError(f"{sub}: expected an object")
            extra = sorted(set(data[name]) - set(VARIANTS))
            if extra:
                raise SchemaError(f"{sub}: unknown variants {extra}")
            enc = dict(cur)
            for v, section in data[name].items():
                # keys not given keep this variant's own defaults
                built = _build(EncoderTrainConfig, section, f"{sub}.{v}")
                enc[v] = dataclasses.replace(cur[v], **{k: getattr(built, k) for k in section})
            kwargs[name] = enc
        else:
            kwargs[name] = _check_scalar(data[name], cur, sub)
    try:
        return cls(**kwargs)
    except SchemaError:
        raise
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{where}: {exc}") from exc
