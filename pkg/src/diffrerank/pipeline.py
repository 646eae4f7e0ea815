"""End-to-end gated re-ranking, voting, evaluation and hyperparameter sweeps."""

from __future__ import annotations

import csv
import io
import json
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .classifier import ClassifierParams, CandidateSet, candidates_from_logits, logits, softmax
from .config import RunConfig
from .denoiser import Denoiser
from .errors import DataError, ParameterError
from .protector import ProtectorCalibration, calibrate_threshold, should_reclassify
from .rerank import ClassifierConfig, ScoreTrace, score_candidates, select_index
from .rng import derive_seed
from .schedule import NoiseSchedule

GRID_PARAMETERS = ("lambda", "prot", "t_eval", "voters", "K", "mode", "score_mode")


@dataclass(frozen=True)
class PredictionOutcome:
    final_label: int
    protected: bool
    base_top1: int
    voter_labels: tuple[int, ...]
    s_value: float


@dataclass(frozen=True)
class Components:
    """Everything an evaluation needs besides the data and the run configuration."""

    classifier: ClassifierParams
    denoiser: Denoiser
    correct_scores: tuple[float, ...] = ()

    @property
    def schedule(self) -> NoiseSchedule:
        return self.denoiser.schedule


@dataclass(frozen=True)
class EvaluationReport:
    n_total: int
    n_protected: int
    n_reclassified: int
    t_t: int
    t_f: int
    f_t: int
    f_f: int
    base_accuracy: float
    final_accuracy: float
    delta: float
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "n_total": self.n_total,
            "n_protected": self.n_protected,
            "n_reclassified": self.n_reclassified,
            "t_t": self.t_t,
            "t_f": self.t_f,
            "f_t": self.f_t,
            "f_f": self.f_f,
            "base_accuracy": self.base_accuracy,
            "final_accuracy": self.final_accuracy,
            "delta": self.delta,
            "config": self.config,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def accuracy_delta(t_f: int, f_t: int, n_total: int) -> float:
    """Accuracy change in percentage points from the two quadrants that move it."""
    if n_total <= 0:
        raise DataError("n_total must be positive")
    return 100.0 * (f_t - t_f) / n_total


def classifier_config(config: RunConfig, num_classes: int) -> ClassifierConfig:
    # K above the class count is clamped rather than rejected so that the
    # default K=5 works on small label sets
    return ClassifierConfig(
        t_eval=config.t_eval, lam=config.lam, mode=config.score_mode, k=min(config.k, num_classes)
    )


def vote(
    voter_labels: Sequence[int],
    traces: Sequence[ScoreTrace],
    candidates: CandidateSet,
    mode: str = "combined",
    aggregation: str = "plurality",
) -> int:
    """Combine per-voter selections.

    ``plurality``: most votes wins; ties go to the smallest error summed over
    voters (largest in negative mode), then to the better base rank.
    ``summed_error``: a single arg-min (arg-max for negative) over the summed
    mean errors.
    """
    if not voter_labels:
        raise ParameterError("at least one voter is required")
    labels = list(candidates.labels)
    sign = -1.0 if mode == "negative" else 1.0
    summed = np.zeros(len(labels))
    for tr in traces:
        summed += tr.mean_errors
    if aggregation == "summed_error":
        keys = [(sign * summed[j], j) for j in range(len(labels))]
        return labels[min(keys)[1]]
    if aggregation != "plurality":
        raise ParameterError(f"unknown aggregation {aggregation!r}")
    counts = Counter(voter_labels)
    top = max(counts.values())
    tied = [j for j, lab in enumerate(labels) if counts.get(lab, 0) == top]
    if len(tied) == 1:
        return labels[tied[0]]
    if traces:
        best = min((sign * summed[j], j) for j in tied)
        return labels[best[1]]
    return labels[tied[0]]


def classify_one(
    x,
    classifier_params: ClassifierParams,
    calibration: ProtectorCalibration,
    model: Denoiser,
    schedule: NoiseSchedule,
    config: RunConfig | ClassifierConfig,
    voter_seeds: Sequence[int],
    aggregation: str | None = None,
) -> PredictionOutcome:
    """Base prediction, gate, and if the gate opens, re-ranking by each voter and a vote."""
    if not voter_seeds:
        raise ParameterError("at least one voter seed is required")
    lg = logits(classifier_params, x)
    probs = softmax(lg)
    s_value = float(probs.max())
    base_top1 = int(np.argmax(lg))
    if not should_reclassify(s_value, calibration):
        return PredictionOutcome(base_top1, True, base_top1, (), s_value)
    if isinstance(config, RunConfig):
        aggregation = aggregation or config.aggregation
        config = classifier_config(config, probs.size)
    aggregation = aggregation or "plurality"
    candidates = candidates_from_logits(lg, min(config.k, probs.size))
    traces, labels = [], []
    for seed in voter_seeds:
        rng = np.random.Generator(np.random.PCG64(seed))
        trace = score_candidates(x, candidates, model, schedule, config, rng)
        traces.append(trace)
        labels.append(candidates.labels[select_index(trace, config.mode)])
    final = vote(labels, traces, candidates, config.mode, aggregation)
    return PredictionOutcome(final, False, base_top1, tuple(labels), s_value)


def voter_seeds_for(base_seed: int, example_index: int, voters: int) -> list[int]:
    return [derive_seed(base_seed, example_index, v) for v in range(voters)]


def calibration_for(config: RunConfig, components: Components) -> ProtectorCalibration:
    return calibrate_threshold(components.correct_scores, config.prot, config.mode)


def config_echo(config: RunConfig) -> dict:
    return {
        "prot": config.prot,
        "mode": config.mode,
        "lambda": config.lam,
        "score_mode": config.score_mode,
        "t_eval": config.t_eval,
        "K": config.k,
        "voters": config.voters,
        "aggregation": config.aggregation,
        "seed": config.seed,
        "t_max": config.t_max,
    }


def classify_dataset(dataset, components: Components, config: RunConfig, workers: int | None = None):
    """Outcomes for every example, in dataset order, regardless of worker count."""
    x = np.asarray(dataset.examples)
    if x.shape[0] == 0:
        raise DataError("cannot evaluate on an empty dataset")
    calibration = calibration_for(config, components)

    def run(i: int) -> PredictionOutcome:
        return classify_one(
            x[i],
            components.classifier,
            calibration,
            components.denoiser,
            components.schedule,
            config,
            voter_seeds_for(config.seed, i, config.voters),
        )

    workers = workers or config.workers
    if workers <= 1:
        return [run(i) for i in range(x.shape[0])]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run, range(x.shape[0])))


def report_from_outcomes(outcomes: Sequence[PredictionOutcome], labels, config: RunConfig) -> EvaluationReport:
    labels = np.asarray(labels)
    n = len(outcomes)
    if n == 0:
        raise DataError("no outcomes to report")
    tt = tf = ft = ff = 0
    base_correct = final_correct = protected = 0
    for o, y in zip(outcomes, labels):
        b_ok = o.base_top1 == int(y)
        f_ok = o.final_label == int(y)
        base_correct += b_ok
        final_correct += f_ok
        if o.protected:
            protected += 1
            continue
        if b_ok:
            tt += f_ok
            tf += not f_ok
        else:
            ft += f_ok
            ff += not f_ok
    return EvaluationReport(
        n_total=n,
        n_protected=protected,
        n_reclassified=n - protected,
        t_t=tt,
        t_f=tf,
        f_t=ft,
        f_f=ff,
        base_accuracy=base_correct / n,
        final_accuracy=final_correct / n,
        delta=accuracy_delta(tf, ft, n),
        config=config_echo(config),
    )


def evaluate(dataset, components: Components, config: RunConfig, workers: int | None = None) -> EvaluationReport:
    outcomes = classify_dataset(dataset, components, config, workers)
    return report_from_outcomes(outcomes, dataset.labels, config)


def _apply_grid_value(config: RunConfig, name: str, value) -> RunConfig:
    if name not in GRID_PARAMETERS:
        raise ParameterError(f"unknown grid parameter {name!r}; choose from {GRID_PARAMETERS}")
    if name in ("t_eval", "voters", "K"):
        value = int(value)
    elif name in ("lambda", "prot"):
        value = float(value)
    return config.replace(**{name: value})


def ablate(dataset, components: Components, name: str, values: Sequence, config: RunConfig,
           workers: int | None = None) -> list[EvaluationReport]:
    """One evaluation per grid value with everything else, seeds included, held fixed."""
    if name not in GRID_PARAMETERS:
        raise ParameterError(f"unknown grid parameter {name!r}; choose from {GRID_PARAMETERS}")
    reports = []
    for v in values:
        cfg = _apply_grid_value(config, name, v)
        reports.append(evaluate(dataset, components, cfg, workers))
    return reports


ABLATION_COLUMNS = ("n_total", "n_protected", "n_reclassified", "t_t", "t_f", "f_t", "f_f",
                    "base_accuracy", "final_accuracy", "delta")


def ablation_csv(name: str, values: Sequence, reports: Sequence[EvaluationReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([name, *ABLATION_COLUMNS])
    for v, r in zip(values, reports):
        d = r.to_dict()
        w.writerow([v, *(d[c] for c in ABLATION_COLUMNS)])
    return buf.getvalue()
