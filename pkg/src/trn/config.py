"""Run configuration: a flat key = value file plus CLI flag overrides.

The file format is one ``key = value`` pair per line; blank lines and
``#`` comments are ignored; unknown keys are rejected. Flags win over
file values, file values win over defaults.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Any, Callable

from .data import PRESETS
from .errors import ConfigError
from .sampling import SAMPLE_MODES
from .training import FRAME_ORDERS, POOLINGS


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(p) for p in text.split(",") if p.strip())


def _float_list(text: str) -> tuple[float, ...]:
    return tuple(float(p) for p in text.split(",") if p.strip())


def _str_list(text: str) -> tuple[str, ...]:
    return tuple(p.strip() for p in text.split(",") if p.strip())


# field name -> parser for the raw text value
_PARSERS: dict[str, Callable[[str], Any]] = {
    "out_dir": str,
    "seed": int,
    "precision": str,
    "preset": str,
    "train_data": str,
    "val_data": str,
    "data": str,
    "model": str,
    "epochs": int,
    "batch_size": int,
    "learning_rate": float,
    "momentum": float,
    "num_frames": int,
    "subsamples": int,
    "sample_mode": str,
    "pooling": str,
    "frame_order": str,
    "hidden_dim": int,
    "g_dropout": float,
    "num_classes": int,
    "train_count": int,
    "val_count": int,
    "stride": int,
    "tuple_budget": int,
    "fractions": _float_list,
    "scale": int,
    "top_m": int,
    "anchors": int,
    "scales": _int_list,
    "poolings": _str_list,
    "check_configs": int,
}


@dataclass
class RunConfig:
    command: str = ""
    out_dir: str | None = None
    seed: int = 0
    precision: str = "float32"
    preset: str | None = None
    train_data: str | None = None
    val_data: str | None = None
    data: str | None = None
    model: str | None = None
    epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 0.08
    momentum: float = 0.9
    num_frames: int = 8
    subsamples: int = 3
    sample_mode: str = "random"
    pooling: str = "temporal-relation"
    frame_order: str = "ordered"
    hidden_dim: int = 64
    g_dropout: float = 0.0
    num_classes: int | None = None
    train_count: int = 800
    val_count: int = 400
    stride: int = 1
    tuple_budget: int = 0  # 0 means no cap
    fractions: tuple[float, ...] = (0.25, 0.5, 1.0)
    scale: int = 5
    top_m: int = 5
    anchors: int = 5
    scales: tuple[int, ...] = (2, 3, 4, 5)
    poolings: tuple[str, ...] = ("temporal-relation", "average-pool")
    check_configs: int = 20

    def validate(self) -> None:
        if self.precision not in ("float32", "float64"):
            raise ConfigError(f"precision must be float32 or float64, got {self.precision!r}")
        if self.preset is not None and self.preset not in PRESETS:
            raise ConfigError(
                f"unknown preset {self.preset!r}; available: {sorted(PRESETS)}"
            )
        if self.sample_mode not in SAMPLE_MODES:
            raise ConfigError(f"sample_mode must be one of {SAMPLE_MODES}")
        if self.pooling not in POOLINGS:
            raise ConfigError(f"pooling must be one of {POOLINGS}")
        if self.frame_order not in FRAME_ORDERS:
            raise ConfigError(f"frame_order must be one of {FRAME_ORDERS}")
        for p in self.poolings:
            if p not in POOLINGS:
                raise ConfigError(f"poolings entry {p!r} not in {POOLINGS}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be non-negative")
        if self.num_frames < 2 or self.subsamples < 1:
            raise ConfigError("num_frames must be >= 2 and subsamples >= 1")
        if self.hidden_dim < 1:
            raise ConfigError("hidden_dim must be positive")
        if not 0.0 <= self.g_dropout < 1.0:
            raise ConfigError("g_dropout must lie in [0, 1)")
        if self.train_count < 1 or self.val_count < 1:
            raise ConfigError("train_count and val_count must be positive")
        if self.stride < 1:
            raise ConfigError("stride must be >= 1")
        if self.tuple_budget < 0:
            raise ConfigError("tuple_budget must be >= 0")
        for f in self.fractions:
            if not 0.0 < f <= 1.0:
                raise ConfigError(f"fractions must lie in (0, 1], got {f}")
        for s in self.scales:
            if s < 2:
                raise ConfigError("scales entries must be >= 2")
        if self.check_configs < 1:
            raise ConfigError("check_configs must be positive")

    def require(self, *names: str) -> None:
        for name in names:
            if getattr(self, name) is None:
                raise ConfigError(f"{self.command}: missing required setting {name!r}")

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = list(value)
            out[f.name] = value
        return out


def parse_config_file(path) -> dict[str, Any]:
    """Typed values from a key = value file; unknown keys are rejected."""
    values: dict[str, Any] = {}
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value, got {raw.strip()!r}")
        key, _, text = line.partition("=")
        key = key.strip()
        text = text.strip()
        if key not in _PARSERS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            values[key] = _PARSERS[key](text)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc
    return values


def resolve_config(
    command: str, config_path: str | None, overrides: dict[str, Any]
) -> RunConfig:
    """Defaults <- config file <- CLI flags, then validate."""
    cfg = RunConfig(command=command)
    if config_path is not None:
        for key, value in parse_config_file(config_path).items():
            setattr(cfg, key, value)
    for key, value in overrides.items():
        if value is None:
            continue
        if key not in _PARSERS:
            raise ConfigError(f"unknown override {key!r}")
        try:
            setattr(cfg, key, _PARSERS[key](value) if isinstance(value, str) else value)
        except ValueError as exc:
            raise ConfigError(f"bad value for --{key.replace('_', '-')}: {exc}") from exc
    cfg.validate()
    return cfg
