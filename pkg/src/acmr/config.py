"""Run configuration: a strict JSON document echoed into every output directory."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .data import SyntheticSpec
from .trainer import Schedule, TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class DataPaths:
    features: str
    attributes: str
    labels: str
    split: str


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    synthetic: SyntheticSpec | None = None
    data: DataPaths | None = None
    out_dir: str = "runs/acmr"

    def __post_init__(self):
        if self.synthetic is None and self.data is None:
            self.synthetic = SyntheticSpec()
        if self.synthetic is not None and self.data is not None:
            raise ConfigError("give either 'synthetic' or 'data', not both")

    def to_dict(self) -> dict:
        return {"train": dataclasses.asdict(self.train),
                "synthetic": None if self.synthetic is None else dataclasses.asdict(self.synthetic),
                "data": None if self.data is None else dataclasses.asdict(self.data),
                "out_dir": self.out_dir}

    def with_seed(self, seed: int) -> "RunConfig":
        """Override the training seed and, for synthetic data, the data seed."""
        train = dataclasses.replace(self.train, seed=seed)
        synth = None if self.synthetic is None else dataclasses.replace(self.synthetic, seed=seed)
        return RunConfig(train, synth, self.data, self.out_dir)


def _build(cls, doc, where: str):
    if not isinstance(doc, dict):
        raise ConfigError(f"{where}: expected an object")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - set(known))
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    kwargs = {}
    for name, value in doc.items():
        if cls is TrainConfig and name in ("beta_schedule", "lambda_schedule"):
            value = _build(Schedule, value, f"{where}.{name}")
        elif isinstance(known[name].default, float) and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _check_types(obj, where: str) -> None:
    for f in dataclasses.fields(obj):
        value = getattr(obj, f.name)
        default = f.default if f.default is not dataclasses.MISSING else None
        if dataclasses.is_dataclass(value):
            _check_types(value, f"{where}.{f.name}")
        elif isinstance(default, bool) and not isinstance(value, bool):
            raise ConfigError(f"{where}.{f.name}: expected a boolean")
        elif isinstance(default, int) and not isinstance(default, bool) and (
                isinstance(value, bool) or not isinstance(value, int)):
            raise ConfigError(f"{where}.{f.name}: expected an integer")
        elif isinstance(default, float) and (isinstance(value, bool) or not isinstance(value, (int, float))):
            raise ConfigError(f"{where}.{f.name}: expected a number")
        elif isinstance(default, str) and not isinstance(value, str):
            raise ConfigError(f"{where}.{f.name}: expected a string")


def config_from_dict(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(doc) - {"train", "synthetic", "data", "out_dir"})
    if unknown:
        raise ConfigError(f"unknown top-level keys {unknown}")
    train = _build(TrainConfig, doc.get("train") or {}, "train")
    synth = doc.get("synthetic")
    synth = None if synth is None else _build(SyntheticSpec, synth, "synthetic")
    data = doc.get("data")
    data = None if data is None else _build(DataPaths, data, "data")
    out_dir = doc.get("out_dir", "runs/acmr")
    if not isinstance(out_dir, str):
        raise ConfigError("out_dir must be a string")
    cfg = RunConfig(train, synth, data, out_dir)
    _check_types(cfg.train, "train")
    if cfg.synthetic is not None:
        _check_types(cfg.synthetic, "synthetic")
        try:
            cfg.synthetic.validate()
        except ValueError as exc:
            raise ConfigError(f"synthetic: {exc}") from None
    return cfg


def load_config(path) -> RunConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    return config_from_dict(doc)


def dumps(cfg: RunConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n"
