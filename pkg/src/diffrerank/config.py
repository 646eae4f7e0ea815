"""Run configuration: defaults, JSON parsing and validation."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, fields

from .errors import ConfigError

# JSON key -> attribute name, where they differ
_KEY_TO_ATTR = {"lambda": "lam", "K": "k"}
_ATTR_TO_KEY = {v: k for k, v in _KEY_TO_ATTR.items()}


@dataclass(frozen=True)
class RunConfig:
    # confidence protector
    prot: float = 0.95
    mode: str = "absolute"  # threshold mode: absolute | quantile
    # diffusion re-ranking
    t_eval: int = 30
    lam: float = 1.1
    score_mode: str = "combined"  # positive | negative | combined
    k: int = 5
    voters: int = 5
    aggregation: str = "plurality"  # plurality | summed_error
    # schedule
    t_max: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    # denoiser network and training
    hidden: int = 256
    time_embed_dim: int = 32
    class_embed_dim: int = 16
    epochs: int = 30
    batch_size: int = 128
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    # base classifier
    base_hidden: int = 32
    base_epochs: int = 5
    base_batch_size: int = 128
    base_learning_rate: float = 1e-3
    # execution
    seed: int = 0
    workers: int = 1
    calibration: str | None = None

    def __post_init__(self):
        validate(self)

    def to_dict(self) -> dict:
        return {_ATTR_TO_KEY.get(f.name, f.name): getattr(self, f.name) for f in fields(self)}

    def replace(self, **changes) -> "RunConfig":
        changes = {_KEY_TO_ATTR.get(k, k): v for k, v in changes.items()}
        return dataclasses.replace(self, **changes)


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


def validate(c: RunConfig) -> None:
    def is_int(v):
        return isinstance(v, int) and not isinstance(v, bool)

    def is_num(v):
        return (isinstance(v, (int, float)) and not isinstance(v, bool)) and math.isfinite(v)

    for f in fields(c):
        v = getattr(c, f.name)
        if f.name == "calibration":
            _check(v is None or isinstance(v, str), "calibration must be a path or null")
        elif f.type in ("int",):
            _check(is_int(v), f"{f.name} must be an integer, got {v!r}")
        elif f.type in ("float",):
            _check(is_num(v), f"{f.name} must be a finite number, got {v!r}")
        elif f.type in ("str",):
            _check(isinstance(v, str), f"{f.name} must be a string, got {v!r}")
    _check(0.0 <= c.prot <= 1.0, f"prot must lie in [0, 1], got {c.prot}")
    _check(c.mode in ("absolute", "quantile"), f"mode must be 'absolute' or 'quantile', got {c.mode!r}")
    _check(
        c.score_mode in ("positive", "negative", "combined"),
        f"score_mode must be positive, negative or combined, got {c.score_mode!r}",
    )
    _check(c.lam >= 0, f"lambda must be non-negative, got {c.lam}")
    if c.score_mode == "combined":
        _check(c.lam >= 1, f"combined scoring requires lambda >= 1, got {c.lam}")
    _check(c.aggregation in ("plurality", "summed_error"), f"unknown aggregation {c.aggregation!r}")
    for name in ("t_eval", "k", "voters", "t_max", "hidden", "class_embed_dim", "batch_size",
                 "base_hidden", "base_batch_size", "workers", "time_embed_dim"):
        _check(getattr(c, name) >= 1, f"{_ATTR_TO_KEY.get(name, name)} must be >= 1")
    _check(c.time_embed_dim % 2 == 0, "time_embed_dim must be even")
    _check(c.t_eval <= c.t_max, "t_eval cannot exceed t_max")
    _check(c.epochs >= 0 and c.base_epochs >= 0, "epoch counts must be non-negative")
    _check(0 < c.beta_start <= c.beta_end < 1, "need 0 < beta_start <= beta_end < 1")
    for name in ("learning_rate", "base_learning_rate", "adam_beta1", "adam_beta2"):
        _check(0 < getattr(c, name) < 1, f"{name} must lie in (0, 1)")
    _check(c.adam_epsilon > 0, "adam_epsilon must be positive")
    _check(c.seed >= 0, "seed must be non-negative")


def config_from_mapping(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a JSON object")
    known = {_ATTR_TO_KEY.get(f.name, f.name) for f in fields(RunConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
    kwargs = {_KEY_TO_ATTR.get(k, k): v for k, v in data.items()}
    # JSON integers are acceptable where floats are expected
    for f in fields(RunConfig):
        if f.type == "float" and isinstance(kwargs.get(f.name), int) and not isinstance(kwargs[f.name], bool):
            kwargs[f.name] = float(kwargs[f.name])
    return RunConfig(**kwargs)


def parse_config(path) -> RunConfig:
    """Load a UTF-8 JSON object; absent keys take their defaults, unknown keys are rejected."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except UnicodeDecodeError as exc:
        raise ConfigError(f"{path}: not valid UTF-8") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON: {exc}") from exc
    return config_from_mapping(data)
