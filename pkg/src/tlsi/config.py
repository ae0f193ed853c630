"""Run configuration shared by the trainer, checkpoints and the CLI."""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field

VARIANTS = ("tlsi", "tlsi-wo-tp", "tlsi-l", "tlsi-l-c", "tlsi-l-t", "tlsi-s", "tlsi-f", "lstm", "meanpool")


@dataclass
class TrainConfig:
    variant: str = "tlsi"
    epochs: int = 10
    batch_size: int = 128
    lr: float = 0.001
    max_len: int = 100
    max_len_long: int = 100
    min_len: int = 5
    train_targets: int = 3
    valid_fraction: float = 0.1
    seed: int = 0
    d_item: int = 18
    d_cat: int = 18
    d_hidden: int = 36
    mlp_hidden: int = 64
    activation: str = "dice"
    standardize: bool = True
    clip_norm: float = 0.0  # 0 disables clipping
    eval_batch_size: int = 256
    bucket_pool: int = 16  # batches per length-sorted run; 1 gives plain shuffling

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {', '.join(VARIANTS)}")
        for name in ("batch_size", "max_len", "max_len_long", "min_len", "train_targets", "d_item", "d_cat",
                     "d_hidden", "mlp_hidden", "eval_batch_size", "bucket_pool"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.epochs < 0 or self.lr < 0 or self.clip_norm < 0:
            raise ValueError("epochs, lr and clip_norm must be non-negative")
        if not 0.0 <= self.valid_fraction < 1.0:
            raise ValueError("valid_fraction must lie in [0, 1)")
        if self.activation not in ("dice", "prelu"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.variant in ("tlsi", "tlsi-wo-tp", "tlsi-f") and self.d_item + self.d_cat != self.d_hidden:
            raise ValueError("fusion needs d_item + d_cat == d_hidden")

    @property
    def d_behavior(self) -> int:
        return self.d_item + self.d_cat

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**d)

    def replace(self, **kw) -> "TrainConfig":
        return dataclasses.replace(self, **kw)


def _coerce(value: str, target_type):
    if target_type is bool or target_type == "bool":
        low = value.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if target_type in (int, "int"):
        return int(value)
    if target_type in (float, "float"):
        return float(value)
    return value.strip()


def read_config_file(path: str) -> dict[str, dict[str, str]]:
    """Read an INI-style key-value file; returns {section: {key: raw value}}.

    Recognised sections are ``[train]``, ``[synthetic]`` and ``[paths]``.
    """
    parser = configparser.ConfigParser(interpolation=None)
    with open(path) as fh:
        parser.read_file(fh)
    allowed = {"train", "synthetic", "paths"}
    extra = set(parser.sections()) - allowed
    if extra:
        raise ValueError(f"unknown config sections: {', '.join(sorted(extra))}")
    return {s: dict(parser.items(s)) for s in parser.sections()}


def train_overrides(raw: dict[str, str]) -> dict:
    types = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    out = {}
    for key, value in raw.items():
        if key not in types:
            raise ValueError(f"unknown [train] key {key!r}")
        out[key] = _coerce(value, types[key])
    return out
