"""Run configuration and its key=value text format.

The file is INI-style: ``[section]`` headers followed by ``key = value``
lines. Sections and keys mirror the dataclasses below; anything unknown is
rejected. Command-line overrides use ``section.key=value``.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    num_classes: int = 3
    channels: int = 8
    height: int = 14
    width: int = 14
    n_train: int = 64
    n_test_normal: int = 16
    n_test_anomalous: int = 16
    noise_std: float = 0.2
    shift_factor: float = 5.0
    image_size: int = 42


@dataclass
class ModelConfig:
    width: int = 64
    heads: int = 4
    enc_depth: int = 4
    dec_depth: int = 4
    ff_mult: int = 4
    dropout: float = 0.1
    token_dim: int = 32
    classifier_hidden: int = 256
    inr_depth: int = 5
    omega0: float = 30.0
    jitter_scale: float = 0.2
    use_adapter: bool = True
    use_query: bool = True


@dataclass
class LossConfig:
    lambda_ce: float = 1.0
    lambda_prior: float = 0.1
    prior_reduction: str = "sum"


@dataclass
class OptimConfig:
    kind: str = "adamw"
    lr: float = 1e-4
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class ScheduleConfig:
    total_epochs: int = 200
    decay_epoch: int = 160
    decay_factor: float = 0.1


@dataclass
class RunConfig:
    seed: int = 0
    precision: str = "float32"
    batch_size: int = 32
    output_dir: str = "runs/default"
    run_id: str = "mintad"
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)

    @property
    def dtype(self):
        return np.dtype(self.precision)

    def validate(self) -> "RunConfig":
        if self.precision not in ("float32", "float64"):
            raise ConfigError(f"precision must be float32 or float64, got {self.precision!r}")
        if self.optim.kind != "adamw":
            raise ConfigError(f"only the adamw optimizer is supported, got {self.optim.kind!r}")
        if self.optim.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.optim.lr}")
        if self.schedule.decay_epoch > self.schedule.total_epochs:
            raise ConfigError("decay_epoch must not exceed total_epochs")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.model.width % self.model.heads:
            raise ConfigError(f"width {self.model.width} not divisible by heads {self.model.heads}")
        if self.model.width % 4:
            raise ConfigError("width must be divisible by 4 (2-D sine position table)")
        if self.loss.prior_reduction not in ("sum", "mean"):
            raise ConfigError(f"prior_reduction must be sum or mean, got {self.loss.prior_reduction!r}")
        if self.loss.lambda_ce < 0 or self.loss.lambda_prior < 0:
            raise ConfigError("loss weights must be nonnegative")
        return self

    def replace(self, **sections) -> "RunConfig":
        """Copy with updates, e.g. ``cfg.replace(seed=1, model={"width": 32})``."""
        out = from_dict(to_dict(self))
        for key, value in sections.items():
            if isinstance(value, dict):
                sub = getattr(out, key)
                for k, v in value.items():
                    if not hasattr(sub, k):
                        raise ConfigError(f"unknown key {key}.{k}")
                    setattr(sub, k, v)
            else:
                if not hasattr(out, key):
                    raise ConfigError(f"unknown key {key}")
                setattr(out, key, value)
        return out


SECTIONS = {
    "data": DataConfig,
    "model": ModelConfig,
    "loss": LossConfig,
    "optim": OptimConfig,
    "schedule": ScheduleConfig,
}
RUN_KEYS = ("seed", "precision", "batch_size", "output_dir", "run_id")


def _parse(value: str, typ, where: str):
    typ = {"int": int, "float": float, "str": str, "bool": bool}.get(typ, typ)
    try:
        if typ is bool:
            low = value.strip().lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(value)
        return typ(value.strip())
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {value!r} as {typ.__name__}") from None


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def to_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)


def from_dict(d: dict) -> RunConfig:
    d = dict(d)
    subs = {name: cls(**d.pop(name, {})) for name, cls in SECTIONS.items()}
    return RunConfig(**d, **subs)


def dumps(cfg: RunConfig) -> str:
    lines = ["[run]"]
    lines += [f"{k} = {_format(getattr(cfg, k))}" for k in RUN_KEYS]
    for name in SECTIONS:
        sub = getattr(cfg, name)
        lines.append("")
        lines.append(f"[{name}]")
        lines += [f"{f.name} = {_format(getattr(sub, f.name))}" for f in dataclasses.fields(sub)]
    return "\n".join(lines) + "\n"


def _field_types(cls) -> dict:
    return {f.name: f.type for f in dataclasses.fields(cls)}


def apply_override(cfg: RunConfig, key: str, value: str) -> None:
    if "." in key:
        section, name = key.split(".", 1)
    else:
        section, name = "run", key
    if section == "run":
        if name not in RUN_KEYS:
            raise ConfigError(f"unknown key run.{name}")
        setattr(cfg, name, _parse(value, _field_types(RunConfig)[name], f"run.{name}"))
        return
    if section not in SECTIONS:
        raise ConfigError(f"unknown section [{section}]")
    types = _field_types(SECTIONS[section])
    if name not in types:
        raise ConfigError(f"unknown key {section}.{name}")
    setattr(getattr(cfg, section), name, _parse(value, types[name], f"{section}.{name}"))


def loads(text: str, overrides: Iterable[str] = (), base: RunConfig | None = None) -> RunConfig:
    """Parse config text on top of ``base`` (defaults if None), then apply
    ``section.key=value`` overrides."""
    parser = configparser.ConfigParser(interpolation=None, strict=True)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as err:
        raise ConfigError(str(err)) from None
    cfg = from_dict(to_dict(base)) if base is not None else RunConfig()
    for section in parser.sections():
        for key, value in parser.items(section):
            apply_override(cfg, f"{section}.{key}", value)
    apply_overrides(cfg, overrides)
    return cfg.validate()


def apply_overrides(cfg: RunConfig, overrides: Iterable[str]) -> RunConfig:
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        k, v = item.split("=", 1)
        apply_override(cfg, k.strip().lstrip("-"), v)
    return cfg


def load(path: str | Path, overrides: Iterable[str] = (), base: RunConfig | None = None) -> RunConfig:
    return loads(Path(path).read_text(), overrides, base)


# Named starting points. "desk" is the dataclass defaults; "quick" is a
# smaller, faster-converging setting used by the acceptance sweeps; "paper"
# keeps the long full-scale schedule.
PRESETS: dict[str, dict] = {
    "desk": {},
    "quick": {
        "batch_size": 4,
        "data": {"n_train": 32},
        "model": {"width": 32, "heads": 2, "enc_depth": 2, "dec_depth": 2},
        "loss": {"prior_reduction": "mean"},
        "optim": {"lr": 1e-3},
        "schedule": {"total_epochs": 40, "decay_epoch": 30},
    },
    "paper": {
        "schedule": {"total_epochs": 1000, "decay_epoch": 800},
    },
}


def preset(name: str) -> RunConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return RunConfig().replace(**PRESETS[name]).validate()


def save(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(dumps(cfg))
