"""Flat run configuration: defaults, presets, JSON file, overrides.

Precedence, lowest to highest: built-in defaults, preset, config file,
command-line ``key=value`` overrides.  Every key is registered with a
type; unknown keys are rejected outright so typos fail before any
compute.  The ``TEMPREL_CONFIG`` environment variable supplies a default
config file path when none is given explicitly.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError
from .inference import ConstraintSet
from .labels import LabelScheme
from .model import ModelConfig
from .presets import PRESETS
from .training import TrainSettings

ENV_CONFIG = "TEMPREL_CONFIG"


@dataclass
class RunConfig:
    scheme: str = "dense6"
    preset: str = ""
    train_corpus: str = ""
    dev_corpus: str = ""
    test_corpus: str = ""
    embeddings: str = "hashed"       # hashed | numeric | sidecar path
    checkpoint: str = ""
    out_dir: str = "runs"

    d_word: int = 32
    d_pos: int = 8
    d_in: int = 32
    hidden: int = 32
    layers: int = 1
    dropout: float = 0.0
    features: bool = False

    lr_local: float = 2e-3
    lr_global: float = 0.05
    lr_decay: float = 0.7
    c_reg: float = 1e-4
    epochs_local: int = 30
    epochs_global: int = 20
    patience: int = 5
    momentum: float = 0.9
    augmented_margin: bool = True

    direction: str = "forward"       # training augmentation
    eval_direction: str = "forward"  # forward | both
    exclude: str = ""                # comma-separated labels
    seeds: str = "0"                 # comma-separated ints
    stage: str = "both"              # local | global | both
    decode: str = "global"           # local | global
    symmetry: bool = True
    transitivity: bool = True
    causal: bool = False
    jobs: int = 1

    def seed_list(self) -> list[int]:
        try:
            return [int(s) for s in self.seeds.split(",") if s.strip() != ""]
        except ValueError:
            raise ConfigError(f"seeds must be comma-separated ints: "
                            f"{self.seeds!r}") from None

    def exclude_labels(self) -> tuple[str, ...]:
        return tuple(s for s in self.exclude.split(",") if s.strip() != "")

    def constraint_set(self) -> ConstraintSet:
        return ConstraintSet(symmetry=self.symmetry,
                             transitivity=self.transitivity,
                             causal=self.causal)

    def model_config(self, scheme: LabelScheme) -> ModelConfig:
        return ModelConfig(
            n_labels=scheme.n,
            n_causal=scheme.causal.n if scheme.causal is not None else 0,
            d_word=self.d_word, d_pos=self.d_pos, d_in=self.d_in,
            hidden=self.hidden, layers=self.layers, dropout=self.dropout,
            features=self.features)

    def train_settings(self, seed: int) -> TrainSettings:
        return TrainSettings(
            lr_local=self.lr_local, lr_global=self.lr_global,
            lr_decay=self.lr_decay, c_reg=self.c_reg,
            epochs_local=self.epochs_local, epochs_global=self.epochs_global,
            patience=self.patience, momentum=self.momentum,
            direction=self.direction, exclude=self.exclude_labels(),
            augmented_margin=self.augmented_margin, seed=seed)


_FIELDS = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _coerce(key: str, value, target) -> object:
    if isinstance(value, str):
        if target is bool:
            low = value.strip().lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ConfigError(f"config key {key!r} expects a boolean, "
                            f"got {value!r}")
        try:
            return target(value)
        except ValueError:
            raise ConfigError(f"config key {key!r} expects {target.__name__}, "
                            f"got {value!r}") from None
    if target is bool:
        if isinstance(value, bool):
            return value
        raise ConfigError(f"config key {key!r} expects a boolean")
    if target is float and isinstance(value, (int, float)) \
            and not isinstance(value, bool):
        return float(value)
    if target is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"config key {key!r} expects an int")
        return value
    if not isinstance(value, target):
        raise ConfigError(f"config key {key!r} expects {target.__name__}")
    return value


def _apply(cfg: RunConfig, items: dict, origin: str) -> None:
    # presets first, so the same mapping's other keys override them
    if "preset" in items:
        name = items["preset"]
        if name not in PRESETS:
            raise ConfigError(f"{origin}: unknown preset {name!r} "
                            f"(have: {', '.join(sorted(PRESETS))})")
        cfg.preset = name
        for key, value in PRESETS[name].items():
            setattr(cfg, key, _coerce(key, value, _target(key)))
    for key, value in items.items():
        if key == "preset":
            continue
        setattr(cfg, key, _coerce(key, value, _target(key)))


def _target(key: str):
    kind = _FIELDS.get(key)
    if kind is None:
        raise ConfigError(f"unknown config key {key!r}")
    return {"str": str, "int": int, "float": float, "bool": bool}[kind] \
        if isinstance(kind, str) else kind


def parse_overrides(pairs: list[str]) -> dict[str, str]:
    out: dict[str, str] = {}
    for pair in pairs:
        key, eq, value = pair.partition("=")
        if not eq or not key:
            raise ConfigError(f"override must look like key=value: {pair!r}")
        out[key.strip()] = value
    return out


def load_run_config(path: str | None = None,
                    overrides: list[str] | None = None,
                    env: dict | None = None) -> RunConfig:
    """Build the effective configuration for one command invocation."""
    env = os.environ if env is None else env
    cfg = RunConfig()
    if path is None:
        path = env.get(ENV_CONFIG) or None
    if path is not None:
        try:
            raw = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        try:
            items = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from None
        if not isinstance(items, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        _apply(cfg, items, str(path))
    if overrides:
        _apply(cfg, parse_overrides(overrides), "overrides")
    return cfg
