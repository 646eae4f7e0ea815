"""Noise schedule, closed-form forward diffusion and the simple noise-prediction loss."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Literal

import numpy as np

from .errors import ConditionError, ParameterError, ShapeError

DEFAULT_T_MAX = 1000
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.02


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Per-step variances ``betas`` and their cumulative signal fractions.

    ``alpha_bars[t - 1]`` holds the product of ``1 - beta_s`` for ``s <= t``;
    use :func:`alpha_bar` for 1-based lookup with ``t = 0`` as the identity.
    Values are kept in float64 since they are scalars shared by every call.
    """

    t_max: int
    betas: np.ndarray
    alpha_bars: np.ndarray

    def __post_init__(self):
        if self.t_max < 1 or len(self.betas) != self.t_max or len(self.alpha_bars) != self.t_max:
            raise ParameterError("schedule arrays must have t_max entries")
        if not np.all((self.betas > 0) & (self.betas < 1)):
            raise ParameterError("every beta must lie in (0, 1)")
        self.betas.setflags(write=False)
        self.alpha_bars.setflags(write=False)


def schedule_from_betas(betas: Iterable[float]) -> NoiseSchedule:
    betas = np.asarray(list(betas), dtype=np.float64)
    if betas.ndim != 1 or betas.size == 0:
        raise ParameterError("betas must be a non-empty 1-d sequence")
    if not np.all((betas > 0) & (betas < 1)):
        raise ParameterError("every beta must lie in (0, 1)")
    alpha_bars = np.empty_like(betas)
    acc = 1.0
    for i, b in enumerate(betas):
        acc *= 1.0 - b
        alpha_bars[i] = acc
    return NoiseSchedule(t_max=int(betas.size), betas=betas, alpha_bars=alpha_bars)


def make_linear_schedule(
    t_max: int = DEFAULT_T_MAX,
    beta_start: float = DEFAULT_BETA_START,
    beta_end: float = DEFAULT_BETA_END,
) -> NoiseSchedule:
    """Linearly spaced betas from ``beta_start`` to ``beta_end`` inclusive."""
    if int(t_max) != t_max or t_max < 1:
        raise ParameterError(f"t_max must be a positive integer, got {t_max!r}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ParameterError(
            f"need 0 < beta_start <= beta_end < 1, got beta_start={beta_start}, beta_end={beta_end}"
        )
    return schedule_from_betas(np.linspace(beta_start, beta_end, int(t_max)))


def alpha_bar(schedule: NoiseSchedule, t: int) -> float:
    if not 0 <= t <= schedule.t_max:
        raise IndexError(f"timestep {t} outside [0, {schedule.t_max}]")
    if t == 0:
        return 1.0
    return float(schedule.alpha_bars[t - 1])


def forward_diffuse(x0, t: int, eps, schedule: NoiseSchedule) -> np.ndarray:
    """Sample of q(x_t | x_0) for a given noise draw ``eps``."""
    x0 = np.asarray(x0)
    eps = np.asarray(eps)
    if x0.shape != eps.shape:
        raise ShapeError(f"x0 shape {x0.shape} != eps shape {eps.shape}")
    if not 1 <= t <= schedule.t_max:
        raise IndexError(f"timestep {t} outside [1, {schedule.t_max}]")
    ab = alpha_bar(schedule, t)
    out_dtype = np.result_type(x0.dtype, eps.dtype, np.float32)
    out = math.sqrt(ab) * x0.astype(np.float64) + math.sqrt(1.0 - ab) * eps.astype(np.float64)
    return out.astype(out_dtype, copy=False)


def simple_loss(eps_true, eps_pred) -> float:
    """Mean squared difference between injected and predicted noise."""
    eps_true = np.asarray(eps_true)
    eps_pred = np.asarray(eps_pred)
    if eps_true.shape != eps_pred.shape:
        raise ShapeError(f"shape {eps_true.shape} != {eps_pred.shape}")
    diff = eps_true.astype(np.float64) - eps_pred.astype(np.float64)
    return float(np.mean(diff * diff))


@dataclass(frozen=True)
class Condition:
    """A conditioning set for the noise predictor.

    Positive conditions name exactly one class; negative conditions name the
    set of competing classes to be eliminated.
    """

    kind: Literal["positive", "negative"]
    classes: tuple[int, ...]

    def __post_init__(self):
        if self.kind not in ("positive", "negative"):
            raise ConditionError(f"unknown condition kind {self.kind!r}")
        object.__setattr__(self, "classes", tuple(int(c) for c in self.classes))
        if not self.classes:
            raise ConditionError("condition needs at least one class")
        if len(set(self.classes)) != len(self.classes):
            raise ConditionError(f"duplicate classes in condition {self.classes}")
        if min(self.classes) < 0:
            raise ConditionError(f"negative class index in {self.classes}")
        if self.kind == "positive" and len(self.classes) != 1:
            raise ConditionError("a positive condition names exactly one class")

    @classmethod
    def positive(cls, label: int) -> "Condition":
        return cls("positive", (label,))

    @classmethod
    def negative(cls, labels: Iterable[int]) -> "Condition":
        return cls("negative", tuple(labels))

    def check(self, num_classes: int) -> None:
        if max(self.classes) >= num_classes:
            raise ConditionError(f"class index {max(self.classes)} >= num_classes={num_classes}")
