"""Re-ranking of top-K candidates by Monte Carlo denoising error."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .classifier import CandidateSet
from .denoiser import Denoiser
from .errors import ConditionError, ParameterError, ShapeError
from .schedule import Condition, NoiseSchedule, forward_diffuse

SCORE_MODES = ("positive", "negative", "combined")


@dataclass(frozen=True)
class ClassifierConfig:
    t_eval: int = 30
    lam: float = 1.1
    mode: Literal["positive", "negative", "combined"] = "combined"
    k: int = 5

    def __post_init__(self):
        if self.mode not in SCORE_MODES:
            raise ParameterError(f"mode must be one of {SCORE_MODES}, got {self.mode!r}")
        if self.t_eval < 1 or self.k < 1:
            raise ParameterError("t_eval and k must be at least 1")
        if self.lam < 0:
            raise ParameterError("lambda must be non-negative")
        if self.mode == "combined" and self.lam < 1:
            raise ParameterError(f"combined mode requires lambda >= 1, got {self.lam}")


@dataclass(frozen=True, eq=False)
class ScoreTrace:
    labels: tuple[int, ...]
    timesteps: tuple[int, ...]
    errors: np.ndarray  # (K, t_eval)

    @property
    def mean_errors(self) -> np.ndarray:
        return self.errors.mean(axis=1)

    def rows(self):
        for j, label in enumerate(self.labels):
            for i, t in enumerate(self.timesteps):
                yield label, t, float(self.errors[j, i])


def write_trace_csv(path, trace: ScoreTrace) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["candidate", "timestep", "error"])
        for label, t, err in trace.rows():
            w.writerow([label, t, repr(err)])


def choose_timesteps(t_eval: int, t_max: int) -> list[int]:
    """Midpoints of ``t_eval`` equal strata of [1, t_max], rounded half up."""
    if not 1 <= t_eval <= t_max:
        raise ParameterError(f"need 1 <= t_eval <= t_max, got t_eval={t_eval}, t_max={t_max}")
    return [((2 * i + 1) * t_max + t_eval) // (2 * t_eval) for i in range(t_eval)]


def build_condition_pair(candidates: CandidateSet, i: int, mode: str = "combined"):
    """Positive singleton for candidate ``i`` and the remaining candidates as its negative set."""
    if not 0 <= i < candidates.k:
        raise ParameterError(f"candidate index {i} outside [0, {candidates.k})")
    pos = Condition.positive(candidates.labels[i])
    others = candidates.labels[:i] + candidates.labels[i + 1 :]
    if not others:
        if mode != "positive":
            raise ConditionError(f"{mode} mode needs at least 2 candidates")
        return pos, None
    return pos, Condition.negative(others)


def combine_noise(eps_pos, eps_neg, lam: float) -> np.ndarray:
    """eps_neg + lam * (eps_pos - eps_neg), evaluated as lam * eps_pos + (1 - lam) * eps_neg.

    The rearranged form returns ``eps_pos`` bit for bit at ``lam == 1``.
    """
    eps_pos = np.asarray(eps_pos)
    eps_neg = np.asarray(eps_neg)
    if eps_pos.shape != eps_neg.shape:
        raise ShapeError(f"shape {eps_pos.shape} != {eps_neg.shape}")
    return lam * eps_pos + (1.0 - lam) * eps_neg


def score_candidates(
    x,
    candidates: CandidateSet,
    model: Denoiser,
    schedule: NoiseSchedule,
    config: ClassifierConfig,
    rng_stream: np.random.Generator,
) -> ScoreTrace:
    """Per-candidate, per-timestep squared noise-prediction errors.

    One noise draw and one noised input per timestep are shared by every
    candidate, so candidate comparisons are paired.
    """
    x = np.asarray(x)
    ts = choose_timesteps(config.t_eval, schedule.t_max)
    k = candidates.k
    pairs = [build_condition_pair(candidates, j, config.mode) for j in range(k)]
    use_pos = config.mode in ("positive", "combined")
    use_neg = config.mode in ("negative", "combined")

    eps = np.empty((len(ts), x.shape[-1]), dtype=np.float64)
    for i in range(len(ts)):
        eps[i] = rng_stream.standard_normal(x.shape[-1])
    x_ts = np.stack([forward_diffuse(x, t, eps[i], schedule) for i, t in enumerate(ts)])

    # condition columns: candidate j's positive and/or negative condition
    conds = []
    for pos, neg in pairs:
        if use_pos:
            conds.append(pos)
        if use_neg:
            conds.append(neg)
    per = 2 if (use_pos and use_neg) else 1
    preds = model.predict_grid(x_ts, ts, conds).astype(np.float64)
    preds = preds.reshape(len(ts), k, per, x.shape[-1])
    if per == 1:
        final = preds[:, :, 0]
    else:
        final = combine_noise(preds[:, :, 0], preds[:, :, 1], config.lam)
    diff = eps[:, None, :] - final
    errors = np.mean(diff * diff, axis=-1).T  # (K, t_eval)
    return ScoreTrace(labels=candidates.labels, timesteps=tuple(ts), errors=np.ascontiguousarray(errors))


def select_index(trace: ScoreTrace, mode: str) -> int:
    """Winning candidate position; ties resolve to the better base rank."""
    means = trace.mean_errors
    if mode == "negative":
        return int(np.argmax(means))
    return int(np.argmin(means))


def select_label(trace: ScoreTrace, candidates: CandidateSet, mode: str) -> int:
    if tuple(trace.labels) != tuple(candidates.labels):
        raise ParameterError("trace does not belong to these candidates")
    return candidates.labels[select_index(trace, mode)]
