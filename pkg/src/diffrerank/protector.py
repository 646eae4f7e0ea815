"""Confidence protector: threshold calibration, the re-evaluation gate and score diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from .classifier import ClassifierParams, logits, softmax
from .errors import CalibrationError, ParameterError

ALWAYS = "always"
NEVER = "never"
MODES = ("absolute", "quantile")

# exact permutation p-values up to this many (a, b) pairs
EXACT_PAIR_LIMIT = 400


@dataclass(frozen=True)
class ProtectorCalibration:
    correct_scores: tuple[float, ...]
    prot: float
    mode: Literal["absolute", "quantile"]
    threshold: float | str

    def to_dict(self) -> dict:
        return {
            "prot": self.prot,
            "mode": self.mode,
            "threshold": self.threshold,
            "n_correct": len(self.correct_scores),
        }


def collect_correct_scores(classifier_params: ClassifierParams, dataset) -> list[float]:
    """Max-softmax scores of the training examples the classifier gets right, in dataset order."""
    scores, correct = score_table(classifier_params, dataset)
    kept = [s for s, ok in zip(scores, correct) if ok]
    if not kept:
        raise CalibrationError("the classifier gets no training example right")
    return kept


def score_table(classifier_params: ClassifierParams, dataset) -> tuple[list[float], list[bool]]:
    """(max-softmax score, top-1 correct) for every example."""
    x, y = np.asarray(dataset.examples), np.asarray(dataset.labels)
    if x.shape[0] == 0:
        raise CalibrationError("empty training set")
    scores, correct = [], []
    for xi, yi in zip(x, y):
        lg = logits(classifier_params, xi)
        scores.append(float(softmax(lg).max()))
        correct.append(int(np.argmax(lg)) == int(yi))
    return scores, correct


def nearest_rank_index(alpha: float, n: int) -> int:
    """1-based nearest-rank position max(1, ceil(alpha * n)).

    The product is rounded to 9 decimals first so that e.g. ``(1 - 0.7) * 10``
    gives rank 3 rather than 4.
    """
    return max(1, math.ceil(round(alpha * n, 9)))


def calibrate_threshold(scores: Sequence[float], prot: float, mode: str = "absolute") -> ProtectorCalibration:
    if mode not in MODES:
        raise ParameterError(f"mode must be one of {MODES}, got {mode!r}")
    if not 0.0 <= prot <= 1.0:
        raise ParameterError(f"prot must lie in [0, 1], got {prot}")
    scores = tuple(float(s) for s in scores)
    if prot == 1.0:
        threshold: float | str = NEVER
    elif prot == 0.0:
        threshold = ALWAYS
    elif mode == "absolute":
        threshold = float(prot)
    else:
        if not scores:
            raise CalibrationError("quantile mode needs at least one correct-sample score")
        k = nearest_rank_index(1.0 - prot, len(scores))
        threshold = sorted(scores)[k - 1]
    return ProtectorCalibration(scores, float(prot), mode, threshold)


def should_reclassify(s_value: float, calibration: ProtectorCalibration) -> bool:
    th = calibration.threshold
    if th == ALWAYS:
        return True
    if th == NEVER:
        return False
    if calibration.mode == "absolute":
        return s_value < th
    return s_value <= th


@dataclass(frozen=True)
class RankTestResult:
    u_statistic: float
    p_value: float
    cohens_d: float
    method: Literal["exact", "normal"] = "normal"


def _midranks_doubled(values: np.ndarray) -> np.ndarray:
    """Twice the average ranks (1-based), which are always integers."""
    order = np.argsort(values, kind="stable")
    sorted_vals = values[order]
    ranks2 = np.empty(values.size, dtype=np.int64)
    i = 0
    n = values.size
    while i < n:
        j = i
        while j + 1 < n and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        # ranks i+1 .. j+1 share the average (i + j + 2) / 2
        ranks2[order[i : j + 1]] = i + j + 2
        i = j + 1
    return ranks2


def u_statistic(a: Sequence[float], b: Sequence[float]) -> float:
    """Count of pairs with a > b, ties counting one half."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    gt = np.sum(a[:, None] > b[None, :])
    eq = np.sum(a[:, None] == b[None, :])
    return float(gt + 0.5 * eq)


def _exact_two_sided_p(pooled: np.ndarray, n_a: int, u2_obs: int) -> float:
    """Permutation p-value P(|2U - n_a n_b| >= |2U_obs - n_a n_b|) under random labelling.

    Counts subsets of size ``n_a`` by the sum of their doubled midranks.
    """
    n = pooled.size
    n_b = n - n_a
    r2 = _midranks_doubled(pooled)
    # counts[k][s] = number of k-subsets of the items seen so far with doubled rank sum s
    counts = [dict() for _ in range(n_a + 1)]
    counts[0][0] = 1
    for r in r2:
        r = int(r)
        for k in range(n_a - 1, -1, -1):
            src = counts[k]
            if not src:
                continue
            dst = counts[k + 1]
            for s, c in src.items():
                dst[s + r] = dst.get(s + r, 0) + c
    offset = n_a * (n_a + 1)  # doubled n_a(n_a+1)/2
    centre = n_a * n_b
    obs_dev = abs(u2_obs - centre)
    hits = 0
    total = 0
    for s, c in counts[n_a].items():
        total += c
        if abs((s - offset) - centre) >= obs_dev:
            hits += c
    return hits / total


def _normal_two_sided_p(pooled: np.ndarray, n_a: int, n_b: int, u: float) -> float:
    n = n_a + n_b
    _, tie_counts = np.unique(pooled, return_counts=True)
    tie_term = float(np.sum(tie_counts.astype(np.float64) ** 3 - tie_counts))
    var = n_a * n_b / 12.0 * ((n + 1) - tie_term / (n * (n - 1))) if n > 1 else 0.0
    if var <= 0:
        return 1.0
    z = max(abs(u - n_a * n_b / 2.0) - 0.5, 0.0) / math.sqrt(var)
    return min(1.0, math.erfc(z / math.sqrt(2.0)))


def cohens_d(a: Sequence[float], b: Sequence[float]) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    diff = float(a.mean() - b.mean())
    dof = a.size + b.size - 2
    if dof <= 0:
        pooled = 0.0
    else:
        ss = np.sum((a - a.mean()) ** 2) + np.sum((b - b.mean()) ** 2)
        pooled = math.sqrt(ss / dof)
    if pooled == 0.0:
        return 0.0 if diff == 0.0 else math.copysign(math.inf, diff)
    return diff / pooled


def mann_whitney(sample_a, sample_b, method: str = "auto") -> RankTestResult:
    """Two-sided Mann-Whitney U test of ``sample_a`` against ``sample_b`` plus Cohen's d.

    ``method="auto"`` enumerates the permutation distribution when
    ``n_a * n_b <= 400`` and uses the tie-corrected normal approximation with
    continuity correction otherwise.
    """
    a = np.asarray(sample_a, dtype=np.float64).ravel()
    b = np.asarray(sample_b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise ParameterError("both samples must be non-empty")
    if method not in ("auto", "exact", "normal"):
        raise ParameterError(f"unknown method {method!r}")
    u = u_statistic(a, b)
    pooled = np.concatenate([a, b])
    if method == "exact" or (method == "auto" and a.size * b.size <= EXACT_PAIR_LIMIT):
        p = _exact_two_sided_p(pooled, a.size, int(round(2 * u)))
        used = "exact"
    else:
        p = _normal_two_sided_p(pooled, a.size, b.size, u)
        used = "normal"
    return RankTestResult(u_statistic=u, p_value=p, cohens_d=cohens_d(a, b), method=used)
