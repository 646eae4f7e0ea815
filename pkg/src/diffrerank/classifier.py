"""The fast discriminative stage: logits, softmax confidence and top-K candidates."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ParameterError, ShapeError


@dataclass(frozen=True, eq=False)
class ClassifierParams:
    """A perceptron given as ``(weight, bias)`` layers with tanh between them.

    One layer is a linear classifier, two layers a single-hidden-layer one.
    Weights are ``(fan_in, fan_out)``.
    """

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    def __post_init__(self):
        if not self.weights or len(self.weights) != len(self.biases):
            raise ShapeError("need one bias per weight matrix")
        prev = None
        for w, b in zip(self.weights, self.biases):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ShapeError(f"layer shapes {w.shape} / {b.shape} are inconsistent")
            if prev is not None and w.shape[0] != prev:
                raise ShapeError("consecutive layers do not chain")
            prev = w.shape[1]
            w.setflags(write=False)
            b.setflags(write=False)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def num_classes(self) -> int:
        return self.weights[-1].shape[1]

    def arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"w{i}"] = w
            out[f"b{i}"] = b
        return out

    def replace(self, **arrays) -> "ClassifierParams":
        n = len(self.weights)
        weights = tuple(arrays.get(f"w{i}", self.weights[i]) for i in range(n))
        biases = tuple(arrays.get(f"b{i}", self.biases[i]) for i in range(n))
        return dataclasses.replace(self, weights=weights, biases=biases)

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray]) -> "ClassifierParams":
        n = sum(1 for k in arrays if k.startswith("w"))
        return cls(
            weights=tuple(np.asarray(arrays[f"w{i}"]) for i in range(n)),
            biases=tuple(np.asarray(arrays[f"b{i}"]) for i in range(n)),
        )


def init_classifier(d: int, num_classes: int, hidden: int | None = 32, seed: int = 0, dtype=np.float32):
    """Uniform(+-1/sqrt(fan_in)) weights, zero biases; ``hidden=None`` gives a linear model."""
    if d < 1 or num_classes < 2 or (hidden is not None and hidden < 1):
        raise ParameterError("classifier dimensions must be positive with at least 2 classes")
    rng = np.random.default_rng(seed)
    dims = [d, num_classes] if hidden is None else [d, hidden, num_classes]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype))
        biases.append(np.zeros(fan_out, dtype=dtype))
    return ClassifierParams(tuple(weights), tuple(biases))


def forward_layers(params: ClassifierParams, x: np.ndarray) -> list[np.ndarray]:
    """Activations of every layer for a batch, last entry being the logits (float64)."""
    acts = [np.asarray(x, dtype=np.float64)]
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        a = acts[-1] @ w.astype(np.float64) + b.astype(np.float64)
        acts.append(a if i == last else np.tanh(a))
    return acts


def logits(params: ClassifierParams, x) -> np.ndarray:
    x = np.asarray(x)
    if x.shape[-1] != params.input_dim:
        raise ShapeError(f"input has {x.shape[-1]} features, classifier expects {params.input_dim}")
    return forward_layers(params, x)[-1]


def softmax(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise NumericError("softmax needs finite logits")
    e = np.exp(v - v.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def confidence_score(params: ClassifierParams, x) -> float:
    """Maximum softmax probability of the classifier output."""
    return float(softmax(logits(params, x)).max())


@dataclass(frozen=True)
class CandidateSet:
    labels: tuple[int, ...]
    probs: tuple[float, ...]
    s_value: float

    @property
    def k(self) -> int:
        return len(self.labels)

    def __post_init__(self):
        if not self.labels or len(self.labels) != len(self.probs):
            raise ParameterError("candidate labels and probabilities must be non-empty and aligned")
        if len(set(self.labels)) != len(self.labels):
            raise ParameterError("candidate labels must be distinct")


def candidates_from_probs(probs: np.ndarray, k: int) -> CandidateSet:
    probs = np.asarray(probs, dtype=np.float64)
    if not 1 <= k <= probs.shape[-1]:
        raise ParameterError(f"K={k} outside [1, {probs.shape[-1]}]")
    # stable sort on the negated probabilities keeps ascending class index among ties
    order = np.argsort(-probs, kind="stable")[:k]
    return CandidateSet(
        labels=tuple(int(i) for i in order),
        probs=tuple(float(probs[i]) for i in order),
        s_value=float(probs.max()),
    )


def candidates_from_logits(lg: np.ndarray, k: int) -> CandidateSet:
    """Top-K by logit (the softmax can round distinct logits to equal probabilities)."""
    lg = np.asarray(lg, dtype=np.float64)
    probs = softmax(lg)
    if not 1 <= k <= lg.shape[-1]:
        raise ParameterError(f"K={k} outside [1, {lg.shape[-1]}]")
    order = np.argsort(-lg, kind="stable")[:k]
    return CandidateSet(
        labels=tuple(int(i) for i in order),
        probs=tuple(float(probs[i]) for i in order),
        s_value=float(probs.max()),
    )


def topk_candidates(params: ClassifierParams, x, k: int) -> CandidateSet:
    if not 1 <= k <= params.num_classes:
        raise ParameterError(f"K={k} outside [1, {params.num_classes}]")
    return candidates_from_logits(logits(params, x), k)
