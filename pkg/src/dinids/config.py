"""Flat ``section.key = value`` run configuration.

Example::

    # comments start with '#'
    pipeline = di-nids
    seed = 0
    data.source = NF-UNSW-NB15-v2.csv
    data.target = NF-CSE-CIC-IDS2018-v2.csv
    data.subsample = 50000
    dann.epochs = 50
    sgd.learning_rate = 0.0001
    osvm.nu = 0.05

Relative dataset paths are resolved against the config file's directory and
then against ``$DINIDS_DATA_DIR``. ``synthetic:shift-source``,
``synthetic:shift-target`` and ``synthetic:blobs`` name generated datasets.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from dinids.dann import DannTrainConfig
from dinids.evaluation import ProtocolConfig
from dinids.nn import SgdConfig
from dinids.osvm import OsvmConfig
from dinids.pipeline import PIPELINES, ModelConfig

DATA_DIR_ENV = "DINIDS_DATA_DIR"
SYNTHETIC_PREFIX = "synthetic:"


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


@dataclass(frozen=True)
class DataConfig:
    source: str = ""
    target: str = ""
    schema: str = ""
    subsample: int = 0  # 0 keeps every row
    seed: int | None = None  # defaults to the run seed
    synthetic_rows: int = 3000


@dataclass(frozen=True)
class PipelineConfig:
    pipeline: str = "di-nids"
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    output_dir: str = "runs"
    base_dir: str = "."  # directory of the config file, for relative paths

    @property
    def data_seed(self) -> int:
        return self.seed if self.data.seed is None else self.data.seed

    def resolved_model(self) -> ModelConfig:
        """Model settings with the run seed pushed into every seeded component."""
        m = self.model
        return replace(m, dann=replace(m.dann, sgd=replace(m.dann.sgd, seed=self.seed)), osvm=replace(m.osvm, seed=self.seed))

    def to_text(self) -> str:
        """Canonical text form: every key, sorted. Its hash identifies the run."""
        lines = [f"pipeline = {self.pipeline}", f"seed = {self.seed}", f"output.dir = {self.output_dir}"]
        for f in fields(DataConfig):
            v = getattr(self.data, f.name)
            lines.append(f"data.{f.name} = {'' if v is None else v}")
        m = self.model
        for name, obj, skip in (("dann", m.dann, {"sgd"}), ("sgd", m.dann.sgd, {"seed"}), ("osvm", m.osvm, {"seed"}),
                                ("protocol", self.protocol, {"seed"})):
            for f in fields(obj):
                if f.name not in skip:
                    lines.append(f"{name}.{f.name} = {_fmt(getattr(obj, f.name))}")
        for f in fields(ModelConfig):
            if f.name not in ("dann", "osvm"):
                lines.append(f"model.{f.name} = {_fmt(getattr(m, f.name))}")
        return "\n".join(sorted(lines)) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]

    def seeds(self) -> dict:
        return {"run": self.seed, "data": self.data_seed, "folds": self.protocol.fold_seeds() if self.protocol.folds else []}

    def resolve_path(self, name: str) -> str:
        """Find a dataset path; synthetic names pass through untouched."""
        if not name or name.startswith(SYNTHETIC_PREFIX):
            return name
        p = Path(name).expanduser()
        candidates = [p] if p.is_absolute() else [Path(self.base_dir) / p, p]
        env = os.environ.get(DATA_DIR_ENV)
        if env and not p.is_absolute():
            candidates.append(Path(env) / p)
        for c in candidates:
            if c.exists():
                return str(c)
        raise FileNotFoundError(f"dataset not found: {name} (searched {', '.join(str(c) for c in candidates)})")


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (tuple, list)):
        return ",".join(_fmt(x) for x in v)
    return str(v)


def _parse_value(raw: str, kind, key: str):
    raw = raw.strip()
    try:
        if kind is bool:
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "yes")
        if kind == "optional_float":
            return None if raw.lower() in ("none", "") else float(raw)
        if kind == "optional_int":
            return None if raw.lower() in ("none", "") else int(raw)
        if kind == "float_tuple":
            return tuple(float(x) for x in raw.split(",") if x.strip())
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


# key -> (section object name, field name, parser)
_KEYS = {
    "pipeline": ("root", "pipeline", str),
    "seed": ("root", "seed", int),
    "output.dir": ("root", "output_dir", str),
    "data.source": ("data", "source", str),
    "data.target": ("data", "target", str),
    "data.schema": ("data", "schema", str),
    "data.subsample": ("data", "subsample", int),
    "data.seed": ("data", "seed", "optional_int"),
    "data.synthetic_rows": ("data", "synthetic_rows", int),
    "dann.epochs": ("dann", "epochs", int),
    "dann.validation_split": ("dann", "validation_split", float),
    "dann.gamma_rate": ("dann", "gamma_rate", float),
    "dann.lambda_fixed": ("dann", "lambda_fixed", "optional_float"),
    "dann.lambda_max": ("dann", "lambda_max", float),
    "dann.folds": ("dann", "folds", int),
    "dann.early_stop_patience": ("dann", "early_stop_patience", int),
    "dann.adversarial": ("dann", "adversarial", bool),
    "dann.label_loss_mode": ("dann", "label_loss_mode", str),
    "dann.input_dim": ("dann", "input_dim", int),
    "dann.hidden": ("dann", "hidden", int),
    "dann.feature_dim": ("dann", "feature_dim", int),
    "sgd.learning_rate": ("sgd", "learning_rate", float),
    "sgd.batch_size": ("sgd", "batch_size", int),
    "sgd.dropout_ratio": ("sgd", "dropout_ratio", float),
    "osvm.nu": ("osvm", "nu", float),
    "osvm.gamma": ("osvm", "gamma", "optional_float"),
    "osvm.tolerance": ("osvm", "tolerance", float),
    "osvm.max_passes": ("osvm", "max_passes", int),
    "osvm.cache_mb": ("osvm", "cache_mb", float),
    "model.osvm_grid": ("model", "osvm_grid", bool),
    "model.gammas": ("model", "gammas", "float_tuple"),
    "model.nus": ("model", "nus", "float_tuple"),
    "model.osvm_val_fraction": ("model", "osvm_val_fraction", float),
    "model.osvm_max_train": ("model", "osvm_max_train", int),
    "protocol.folds": ("protocol", "folds", int),
    "protocol.test_fraction": ("protocol", "test_fraction", float),
}


def parse_config(text: str, base_dir=".", overrides: dict | None = None) -> PipelineConfig:
    """Parse config text; ``overrides`` maps keys (same spelling) to raw string values."""
    values: dict = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = raw
    for key, raw in (overrides or {}).items():
        if key not in _KEYS:
            raise ConfigError(f"unknown override key {key!r}")
        values[key] = str(raw)

    parts: dict = {name: {} for name in ("root", "data", "dann", "sgd", "osvm", "model", "protocol")}
    for key, raw in values.items():
        section, name, kind = _KEYS[key]
        parts[section][name] = _parse_value(raw, kind, key)
    try:
        sgd = SgdConfig(**parts["sgd"])
        dann = DannTrainConfig(sgd=sgd, **parts["dann"])
        model = ModelConfig(dann=dann, osvm=OsvmConfig(**parts["osvm"]), **parts["model"])
        protocol_kw = dict(parts["protocol"])
        protocol_kw.setdefault("folds", dann.folds)
        root = parts["root"]
        protocol = ProtocolConfig(seed=root.get("seed", 0), **protocol_kw)
        cfg = PipelineConfig(data=DataConfig(**parts["data"]), model=model, protocol=protocol,
                             base_dir=str(base_dir), **root)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    if cfg.pipeline not in PIPELINES:
        raise ConfigError(f"unknown pipeline {cfg.pipeline!r}; choose from {', '.join(PIPELINES)}")
    if cfg.data.subsample < 0:
        raise ConfigError("data.subsample must be non-negative")
    return cfg


def load_config(path, overrides: dict | None = None) -> PipelineConfig:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    return parse_config(path.read_text(), base_dir=path.parent, overrides=overrides)
