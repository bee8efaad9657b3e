"""Experiment configuration and its flat ``key = value`` file format.

Lines look like ``fraction = 0.05``; ``#`` starts a comment. Values are
parsed by the type of the field they set, lists are comma separated, and
``none`` clears an optional field. Unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any

import numpy as np

from .errors import InvalidConfigError

# Battery cost scales produced by `fedle calibrate` on the default synthetic
# setup, one triple per low-power fraction. No single triple reaches the
# lifespan target at all three fractions.
CALIBRATED_BY_FRACTION = {
    0.3: (0.001, 0.4, 0.005),
    0.5: (0.001, 0.08, 0.08),
    0.7: (0.004, 0.02, 0.05),
}
CALIBRATED_SCALES = CALIBRATED_BY_FRACTION[0.5]


@dataclass(frozen=True)
class ExperimentConfig:
    client_count: int = 40
    fraction: float = 0.05
    strategy: str = "fedle"
    local_epochs: int = 1
    batch_size: int = 10
    learning_rate: float = 0.015
    max_rounds: int = 50
    delta: float = 0.2
    dead_fraction_stop: float = 0.5
    cluster_count: int = 3
    w_maj: float = 0.2
    metric: str = "cosine"
    cluster_space: str = "embedding"
    partial_weights: bool = True
    r_scale: float = CALIBRATED_SCALES[0]
    s_scale: float = CALIBRATED_SCALES[1]
    a_scale: float = CALIBRATED_SCALES[2]
    low_power_fraction: float = 0.5
    hidden_dims: tuple[int, ...] = (64,)
    # seeds: every stream derives from `seed` unless overridden
    seed: int = 0
    partition_seed: int | None = None
    init_seed: int | None = None
    battery_seed: int | None = None
    selection_seed: int | None = None
    train_seed: int | None = None
    cluster_seed: int | None = None
    # data
    dataset: str = "synthetic"
    mnist_images: str | None = None
    mnist_labels: str | None = None
    mnist_test_images: str | None = None
    mnist_test_labels: str | None = None
    synthetic_classes: int = 10
    synthetic_dim: int = 40
    synthetic_per_class: int = 240
    synthetic_spread: float = 0.2
    data_seed: int = 0
    test_fraction: float = 0.2
    shard_clients: int = 20
    shard_size: int | None = None
    majority_class: int = 0
    # run modes
    energy_only: bool = False
    diagnostics: bool = False

    def __post_init__(self):
        validate(self)

    @property
    def clients_per_round(self) -> int:
        return max(1, round(self.client_count * self.fraction))

    @property
    def battery_scales(self) -> tuple[float, float, float]:
        return (self.r_scale, self.s_scale, self.a_scale)

    def stream_seed(self, name: str) -> int:
        override = getattr(self, f"{name}_seed")
        if override is not None:
            return int(override)
        return int(np.random.SeedSequence([self.seed, _STREAMS.index(name)]).generate_state(1)[0])

    def with_calibrated_scales(self) -> "ExperimentConfig":
        """Copy using the stored scales for this low-power fraction."""
        key = round(self.low_power_fraction, 6)
        if key not in CALIBRATED_BY_FRACTION:
            raise InvalidConfigError(
                f"low_power_fraction: no calibrated scales for {self.low_power_fraction}; "
                "run `fedle calibrate`"
            )
        r, s, a = CALIBRATED_BY_FRACTION[key]
        return self.replace(r_scale=r, s_scale=s, a_scale=a)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            out[f.name] = list(value) if isinstance(value, tuple) else value
        return out


_STREAMS = ("partition", "init", "battery", "selection", "train", "cluster")


def _fail(key: str, reason: str):
    raise InvalidConfigError(f"{key}: {reason}")


def validate(cfg: ExperimentConfig) -> None:
    from .selection import STRATEGIES
    from .similarity import CLUSTER_SPACES, METRICS

    if cfg.client_count < 2:
        _fail("client_count", f"K must be >= 2, got {cfg.client_count}")
    if not 0 < cfg.fraction <= 1:
        _fail("fraction", f"C ∈ (0,1] required, got {cfg.fraction}")
    if cfg.strategy not in STRATEGIES:
        _fail("strategy", f"must be one of {STRATEGIES}, got {cfg.strategy!r}")
    if cfg.local_epochs < 0:
        _fail("local_epochs", "must be >= 0")
    if cfg.batch_size < 1:
        _fail("batch_size", "must be >= 1")
    if not cfg.learning_rate > 0:
        _fail("learning_rate", "must be > 0")
    if cfg.max_rounds < 1:
        _fail("max_rounds", "must be >= 1")
    if not 0 <= cfg.delta < 1:
        _fail("delta", "must be in [0, 1)")
    if not 0 < cfg.dead_fraction_stop <= 1:
        _fail("dead_fraction_stop", "must be in (0, 1]")
    if not 1 <= cfg.cluster_count <= cfg.client_count:
        _fail("cluster_count", f"must be in [1, {cfg.client_count}]")
    if not 0 <= cfg.w_maj <= 1:
        _fail("w_maj", "must be in [0, 1]")
    if cfg.metric not in METRICS:
        _fail("metric", f"must be one of {METRICS}")
    if cfg.cluster_space not in CLUSTER_SPACES:
        _fail("cluster_space", f"must be one of {CLUSTER_SPACES}")
    for key in ("r_scale", "s_scale", "a_scale"):
        if not getattr(cfg, key) > 0:
            _fail(key, "must be > 0")
    if not 0 <= cfg.low_power_fraction <= 1:
        _fail("low_power_fraction", "must be in [0, 1]")
    if any(h < 1 for h in cfg.hidden_dims):
        _fail("hidden_dims", "every hidden width must be >= 1")
    if cfg.dataset not in ("synthetic", "mnist"):
        _fail("dataset", "must be 'synthetic' or 'mnist'")
    if cfg.dataset == "mnist" and not (cfg.mnist_images and cfg.mnist_labels):
        _fail("mnist_images", "mnist dataset needs mnist_images and mnist_labels")
    if not 0 < cfg.test_fraction < 1:
        _fail("test_fraction", "must be in (0, 1)")
    if not 0 <= cfg.shard_clients <= cfg.client_count:
        _fail("shard_clients", f"must be in [0, {cfg.client_count}]")


def _coerce(key: str, text: str, default: Any, annotation: str) -> Any:
    text = text.strip()
    optional = "None" in annotation
    if optional and text.lower() in ("none", ""):
        return None
    try:
        if annotation.startswith("tuple"):
            return tuple(int(v) for v in text.split(",") if v.strip())
        if annotation.startswith("bool"):
            low = text.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(text)
        if annotation.startswith("int"):
            return int(text)
        if annotation.startswith("float"):
            value = float(text)
            if not math.isfinite(value):
                raise ValueError(text)
            return value
        return text
    except ValueError:
        _fail(key, f"cannot parse {text!r} as {annotation}")


def parse_config_text(text: str, **overrides) -> ExperimentConfig:
    known = {f.name: f for f in fields(ExperimentConfig)}
    values: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise InvalidConfigError(f"{key}: unknown key (line {lineno})")
        f = known[key]
        values[key] = _coerce(key, value, f.default, str(f.type))
    values.update(overrides)
    return ExperimentConfig(**values)


def parse_config(path, **overrides) -> ExperimentConfig:
    return parse_config_text(Path(path).read_text(encoding="utf-8"), **overrides)


def format_config(cfg: ExperimentConfig, keys=None) -> str:
    lines = []
    for key, value in cfg.to_dict().items():
        if keys is not None and key not in keys:
            continue
        if value is None:
            value = "none"
        elif isinstance(value, list):
            value = ",".join(str(v) for v in value)
        elif isinstance(value, bool):
            value = str(value).lower()
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
