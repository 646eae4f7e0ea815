"""Deterministic Adam training loops for the denoiser and the base classifier."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .classifier import ClassifierParams, forward_layers, softmax
from .errors import DataError, ParameterError, ShapeError
from .net import NetParams, net_backward, net_forward
from .rng import stream
from .schedule import Condition, NoiseSchedule

# stream keys; keep distinct so the two loops never share draws
_DENOISER_KEY = 1
_CLASSIFIER_KEY = 2


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 128
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    seed: int = 0
    t_max: int = 1000

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.t_max < 1:
            raise ParameterError("epochs >= 0, batch_size >= 1 and t_max >= 1 are required")
        for name in ("learning_rate", "adam_beta1", "adam_beta2"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ParameterError(f"{name} must lie in (0, 1)")
        if not self.adam_epsilon > 0:
            raise ParameterError("adam_epsilon must be positive")


@dataclass
class OptimizerState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def _as_dict(obj) -> dict[str, np.ndarray]:
    return dict(obj) if isinstance(obj, dict) else obj.arrays()


def adam_update(params, grads, state: OptimizerState, config: TrainConfig):
    """One bias-corrected Adam step; returns new params and a new state.

    ``params`` and ``grads`` are either dicts of arrays or objects exposing
    ``arrays()`` (params additionally ``replace(**arrays)``).
    """
    p = _as_dict(params)
    g = _as_dict(grads)
    if p.keys() != g.keys():
        raise ShapeError(f"gradient names {sorted(g)} do not match parameters {sorted(p)}")
    step = state.step + 1
    b1, b2 = config.adam_beta1, config.adam_beta2
    bc1 = 1.0 - b1**step
    bc2 = 1.0 - b2**step
    new_p, new_m, new_v = {}, {}, {}
    for name, value in p.items():
        grad = np.asarray(g[name], dtype=np.float64)
        if grad.shape != np.shape(value):
            raise ShapeError(f"gradient for {name} has shape {grad.shape}, expected {np.shape(value)}")
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1.0 - b1) * grad if m is None else b1 * m + (1.0 - b1) * grad
        v = (1.0 - b2) * grad * grad if v is None else b2 * v + (1.0 - b2) * grad * grad
        upd = config.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + config.adam_epsilon)
        value = np.asarray(value)
        new_p[name] = (value.astype(np.float64) - upd).astype(value.dtype)
        new_m[name], new_v[name] = m, v
    new_state = OptimizerState(step=step, m=new_m, v=new_v)
    if isinstance(params, dict):
        return new_p, new_state
    return params.replace(**new_p), new_state


def _unpack(dataset):
    if hasattr(dataset, "examples"):
        return np.asarray(dataset.examples), np.asarray(dataset.labels)
    x, y = dataset
    return np.asarray(x), np.asarray(y)


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def train_denoiser(dataset, params: NetParams, schedule: NoiseSchedule, config: TrainConfig):
    """Fit the noise predictor with the simple loss, conditioning on each example's true class.

    Returns the trained parameters and the per-epoch mean loss.
    """
    x, y = _unpack(dataset)
    if x.shape[0] == 0:
        raise DataError("cannot train on an empty dataset")
    if y.min() < 0 or y.max() >= params.num_classes:
        raise DataError(f"labels must lie in [0, {params.num_classes})")
    if x.shape[1] != params.data_dim:
        raise ShapeError(f"data has {x.shape[1]} features, network expects {params.data_dim}")
    conds = [Condition.positive(c) for c in range(params.num_classes)]
    sqrt_ab = np.sqrt(schedule.alpha_bars)
    sqrt_1m = np.sqrt(1.0 - schedule.alpha_bars)
    state = OptimizerState()
    curve = []
    for epoch in range(config.epochs):
        rng = stream(config.seed, _DENOISER_KEY, epoch)
        total, count = 0.0, 0
        for idx in _batches(x.shape[0], config.batch_size, rng):
            x0 = x[idx].astype(np.float64)
            ts = rng.integers(1, schedule.t_max + 1, size=idx.size)
            eps = rng.standard_normal(x0.shape)
            x_t = (sqrt_ab[ts - 1, None] * x0 + sqrt_1m[ts - 1, None] * eps).astype(params.dtype)
            _, cache = net_forward(params, x_t, ts, [conds[c] for c in y[idx]], schedule)
            loss, grads = net_backward(params, cache, eps)
            params, state = adam_update(params, grads, state, config)
            total += loss * idx.size
            count += idx.size
        curve.append(total / count)
    return params, curve


def classifier_loss_and_grads(params: ClassifierParams, x, y):
    """Mean softmax cross-entropy and its gradients for a batch."""
    acts = forward_layers(params, x)
    probs = softmax(acts[-1])
    n = x.shape[0]
    loss = float(-np.mean(np.log(np.maximum(probs[np.arange(n), y], 1e-300))))
    delta = probs.copy()
    delta[np.arange(n), y] -= 1.0
    delta /= n
    grads = {}
    for i in range(len(params.weights) - 1, -1, -1):
        grads[f"w{i}"] = acts[i].T @ delta
        grads[f"b{i}"] = delta.sum(axis=0)
        if i:
            delta = (delta @ params.weights[i].astype(np.float64).T) * (1.0 - acts[i] ** 2)
    return loss, grads


def train_base_classifier(dataset, classifier_params: ClassifierParams, config: TrainConfig):
    """Cross-entropy training; returns params and training accuracy after each epoch."""
    x, y = _unpack(dataset)
    if x.shape[0] == 0:
        raise DataError("cannot train on an empty dataset")
    if y.min() < 0 or y.max() >= classifier_params.num_classes:
        raise DataError(f"labels must lie in [0, {classifier_params.num_classes})")
    params = classifier_params
    state = OptimizerState()
    curve = []
    for epoch in range(config.epochs):
        rng = stream(config.seed, _CLASSIFIER_KEY, epoch)
        for idx in _batches(x.shape[0], config.batch_size, rng):
            _, grads = classifier_loss_and_grads(params, x[idx], y[idx])
            params, state = adam_update(params, grads, state, config)
        pred = np.argmax(forward_layers(params, x)[-1], axis=1)
        curve.append(float(np.mean(pred == y)))
    return params, curve
