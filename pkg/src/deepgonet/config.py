"""Run configuration: JSON file plus ``section.key=value`` overrides."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .annotations import DEFAULT_COLUMNS, EXPERIMENTAL_CODES, STRICT_EXPERIMENTAL_CODES
from .encoding import DEFAULT_MAX_LEN, DEFAULT_SYMBOLS, Alphabet
from .errors import ConfigError
from .model import ModelConfig, TrainConfig


@dataclass
class RunConfig:
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    alphabet: str = DEFAULT_SYMBOLS
    whitelist: list[str] = field(default_factory=lambda: sorted(EXPERIMENTAL_CODES))
    columns: dict = field(default_factory=lambda: dict(DEFAULT_COLUMNS))
    max_len: int = DEFAULT_MAX_LEN
    seed: int = 0
    deterministic: bool = False
    threads: int | None = None

    def __post_init__(self):
        model_keys = {f.name for f in fields(ModelConfig)}
        train_keys = {f.name for f in fields(TrainConfig)}
        if set(self.model) - model_keys:
            raise ConfigError(f"unknown model keys {sorted(set(self.model) - model_keys)}")
        if set(self.train) - train_keys:
            raise ConfigError(f"unknown train keys {sorted(set(self.train) - train_keys)}")
        Alphabet.from_string(self.alphabet)

    @property
    def alphabet_obj(self) -> Alphabet:
        return Alphabet.from_string(self.alphabet)

    def use_strict_evidence(self) -> None:
        self.whitelist = sorted(STRICT_EXPERIMENTAL_CODES)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, obj: dict) -> RunConfig:
        known = {f.name for f in fields(cls)}
        if set(obj) - known:
            raise ConfigError(f"unknown config keys {sorted(set(obj) - known)}")
        return cls(**obj)


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return RunConfig.from_dict(obj)


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(cfg: RunConfig, items: list[str]) -> RunConfig:
    """Apply ``key=value`` or ``section.key=value`` strings; values parse as JSON when they can."""
    obj = asdict(cfg)
    for item in items:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        parts = key.strip().split(".")
        if len(parts) == 1:
            if parts[0] not in obj:
                raise ConfigError(f"unknown config key {parts[0]!r}")
            obj[parts[0]] = _parse_value(value)
        elif len(parts) == 2 and isinstance(obj.get(parts[0]), dict):
            obj[parts[0]][parts[1]] = _parse_value(value)
        else:
            raise ConfigError(f"cannot apply override {item!r}")
    return RunConfig.from_dict(obj)
