"""Flat `key = value` configuration files.

One setting per line, `#` starts a comment, blank lines are ignored. Unknown
and repeated keys are errors. Command-line flags override file values.
"""

import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Optional, Union

from .errors import ConfigError
from .models import MetaKind
from .trainer.training import OptimizerKind, TrainConfig, TrainMode

logger = logging.getLogger(__name__)


def _bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _archs(text: str) -> tuple[MetaKind, ...]:
    return tuple(MetaKind(v.strip()) for v in text.split(",") if v.strip())


def _optional_int(text: str) -> Optional[int]:
    return None if text.lower() in ("", "none") else int(text)


TRAIN_KEYS: dict[str, Callable[[str], Any]] = {
    "mode": TrainMode,
    "alpha": float,
    "epsilon": float,
    "optimizer": OptimizerKind,
    "lr": float,
    "batch_size": int,
    "unit_norm": _bool,
    "epochs": int,
    "patience": _optional_int,
    "seed": int,
    "constrained": _bool,
    "hidden": _ints,
}

AMC_KEYS: dict[str, Callable[[str], Any]] = {
    "folds": int,
    "lambda_grid": _floats,
    "alpha_grid": _floats,
    "meta_archs": _archs,
    "knn_k": int,
    "accuracy_tolerance": float,
    "n_bins": int,
}


@dataclass(frozen=True)
class AmcSettings:
    folds: int = 5
    lambda_grid: tuple[float, ...] = (1e-4, 1e-3, 1e-2, 1e-1)
    alpha_grid: tuple[float, ...] = tuple(round(0.1 * i, 1) for i in range(1, 10))
    meta_archs: tuple[MetaKind, ...] = (MetaKind.LINEAR_LOGISTIC, MetaKind.ONE_HIDDEN_NET)
    knn_k: int = 10
    accuracy_tolerance: float = 0.0
    n_bins: int = 15

    def __post_init__(self):
        if self.folds < 2:
            raise ConfigError(f"folds must be at least 2, got {self.folds}")
        if self.knn_k < 1:
            raise ConfigError(f"knn_k must be at least 1, got {self.knn_k}")
        if self.n_bins < 1:
            raise ConfigError(f"n_bins must be at least 1, got {self.n_bins}")
        if not self.lambda_grid or min(self.lambda_grid) <= 0:
            raise ConfigError("lambda_grid must hold positive values")
        if not self.alpha_grid or not all(0.0 < a < 1.0 for a in self.alpha_grid):
            raise ConfigError("alpha_grid must hold values in (0, 1)")
        if not self.meta_archs:
            raise ConfigError("meta_archs must name at least one architecture")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["meta_archs"] = [k.value for k in self.meta_archs]
        d["lambda_grid"] = list(self.lambda_grid)
        d["alpha_grid"] = list(self.alpha_grid)
        return d


@dataclass(frozen=True)
class ChurnConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    amc: AmcSettings = field(default_factory=AmcSettings)
    source: Optional[str] = None

    def to_dict(self) -> dict:
        return {"train": train_config_to_dict(self.train), "amc": self.amc.to_dict(), "source": self.source}


def train_config_to_dict(cfg: TrainConfig) -> dict:
    d = asdict(cfg)
    d["mode"] = cfg.mode.value
    d["optimizer"] = cfg.optimizer.value
    d["hidden"] = list(cfg.hidden)
    return d


def parse_config_text(text: str, source: str = "<config>") -> dict[str, Any]:
    """Typed values for every key present in the text."""
    values: dict[str, Any] = {}
    seen_at: dict[str, int] = {}
    parsers = {**TRAIN_KEYS, **AMC_KEYS}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in parsers:
            raise ConfigError(f"{source}:{lineno}: unknown key '{key}'")
        if key in seen_at:
            raise ConfigError(f"{source}:{lineno}: duplicate key '{key}' (first set on line {seen_at[key]})")
        try:
            values[key] = parsers[key](value)
        except ValueError as e:
            raise ConfigError(f"{source}:{lineno}: bad value for '{key}': {e}")
        seen_at[key] = lineno
    return values


def build_config(
    values: dict[str, Any], overrides: Optional[dict[str, Any]] = None, source: Optional[str] = None
) -> ChurnConfig:
    """Merge file values with overrides (None means 'not given') into validated settings."""
    merged = dict(values)
    for key, value in (overrides or {}).items():
        if value is not None:
            merged[key] = value
    unknown = set(merged) - set(TRAIN_KEYS) - set(AMC_KEYS)
    if unknown:
        raise ConfigError(f"unknown settings: {', '.join(sorted(unknown))}")
    train = TrainConfig(**{k: v for k, v in merged.items() if k in TRAIN_KEYS})
    amc = AmcSettings(**{k: v for k, v in merged.items() if k in AMC_KEYS})
    return ChurnConfig(train=train, amc=amc, source=source)


def load_config(
    path: Optional[Union[str, Path]] = None, overrides: Optional[dict[str, Any]] = None
) -> ChurnConfig:
    if path is None:
        return build_config({}, overrides)
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}")
    values = parse_config_text(text, str(path))
    logger.debug("config %s: %s", path, sorted(values))
    return build_config(values, overrides, source=str(path))


def with_train_overrides(cfg: ChurnConfig, **changes) -> ChurnConfig:
    return replace(cfg, train=cfg.train.with_overrides(**changes))
