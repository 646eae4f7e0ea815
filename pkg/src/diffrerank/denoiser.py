"""Conditional noise predictors: the trainable network and a closed-form Gaussian oracle."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConditionError, ParameterError, ShapeError
from .net import NetParams, build_inputs, predict_rows
from .schedule import Condition, NoiseSchedule, alpha_bar


@dataclass(frozen=True, eq=False)
class GaussianParams:
    """Class-conditional data model x0 ~ Normal(class_means[c], sigma^2 I)."""

    class_means: np.ndarray
    sigma: float

    def __post_init__(self):
        means = np.asarray(self.class_means, dtype=np.float64)
        if means.ndim != 2 or means.shape[0] < 1:
            raise ParameterError("class_means must be a (num_classes, d) array")
        if not self.sigma > 0:
            raise ParameterError(f"sigma must be positive, got {self.sigma}")
        means.setflags(write=False)
        object.__setattr__(self, "class_means", means)


def analytic_gaussian_predict(
    params: GaussianParams, x_t, t: int, cond: Condition, schedule: NoiseSchedule
) -> np.ndarray:
    """Minimum-MSE noise estimate E[eps | x_t, cond] under the Gaussian data model.

    The conditioning set's class means are averaged before use.
    """
    x_t = np.asarray(x_t)
    cond.check(params.class_means.shape[0])
    mu = params.class_means[sorted(cond.classes)].mean(axis=0)
    if mu.shape != x_t.shape[-1:]:
        raise ShapeError(f"x_t has shape {x_t.shape}, class means have dimension {mu.shape[0]}")
    ab = alpha_bar(schedule, t)
    scale = math.sqrt(1.0 - ab) / (ab * params.sigma**2 + 1.0 - ab)
    out = scale * (x_t.astype(np.float64) - math.sqrt(ab) * mu)
    return out.astype(np.result_type(x_t.dtype, np.float32), copy=False)


class Denoiser:
    """Noise predictor eps(x_t, t, condition) bound to a schedule.

    ``predict_many`` is the batched entry point the re-ranker uses; each row's
    output depends only on that row's inputs.
    """

    backend = "abstract"

    def __init__(self, schedule: NoiseSchedule, num_classes: int, data_dim: int):
        self.schedule = schedule
        self.num_classes = num_classes
        self.data_dim = data_dim

    def predict(self, x_t, t: int, cond: Condition) -> np.ndarray:
        x_t = np.asarray(x_t)
        if x_t.shape != (self.data_dim,):
            raise ShapeError(f"x_t must have shape ({self.data_dim},), got {x_t.shape}")
        return self.predict_many(x_t[None, :], [t], [cond])[0]

    def predict_many(self, x_t: np.ndarray, ts: Sequence[int], conds: Sequence[Condition]) -> np.ndarray:
        raise NotImplementedError

    def predict_grid(self, x_ts: np.ndarray, ts: Sequence[int], conds: Sequence[Condition]) -> np.ndarray:
        """Predictions for every (timestep row, condition) pair, shaped ``(T, M, d)``.

        ``x_ts[i]`` is the noised input at ``ts[i]``.  Each cell equals the
        corresponding single-row prediction.
        """
        x_ts = np.asarray(x_ts)
        n_t, m = len(ts), len(conds)
        rows = np.repeat(x_ts, m, axis=0)
        row_ts = [t for t in ts for _ in range(m)]
        row_conds = list(conds) * n_t
        return self.predict_many(rows, row_ts, row_conds).reshape(n_t, m, self.data_dim)

    def _validate(self, x_t, ts, conds):
        if x_t.ndim != 2 or x_t.shape[1] != self.data_dim:
            raise ShapeError(f"x_t must have shape (n, {self.data_dim}), got {x_t.shape}")
        if len(ts) != x_t.shape[0] or len(conds) != x_t.shape[0]:
            raise ShapeError("need one timestep and one condition per row")
        for t in ts:
            if not 1 <= t <= self.schedule.t_max:
                raise IndexError(f"timestep {t} outside [1, {self.schedule.t_max}]")
        for c in conds:
            if not isinstance(c, Condition):
                raise ConditionError(f"expected a Condition, got {type(c).__name__}")
            c.check(self.num_classes)


class NetworkDenoiser(Denoiser):
    backend = "network"

    def __init__(self, params: NetParams, schedule: NoiseSchedule):
        super().__init__(schedule, params.num_classes, params.data_dim)
        self.params = params

    def predict_many(self, x_t, ts, conds):
        x_t = np.asarray(x_t)
        self._validate(x_t, ts, conds)
        z = build_inputs(self.params, x_t, ts, conds, self.schedule)
        if self.params.dtype != np.float32:
            from .net import net_forward

            pred, _ = net_forward(self.params, x_t, np.asarray(ts), list(conds), self.schedule)
            return pred
        return predict_rows(self.params, z)

    def predict_grid(self, x_ts, ts, conds):
        x_ts = np.asarray(x_ts)
        if self.params.dtype != np.float32:
            return super().predict_grid(x_ts, ts, conds)
        n_t, m = len(ts), len(conds)
        self._validate(x_ts, ts, [conds[0]] * n_t)
        for c in conds:
            c.check(self.num_classes)
        # inputs for the first condition at every timestep, then swap the embedding block
        base = build_inputs(self.params, x_ts, ts, [conds[0]] * n_t, self.schedule)
        embeds = build_inputs(self.params, x_ts[:1].repeat(m, axis=0), [ts[0]] * m, conds, self.schedule)
        off = self.params.data_dim + self.params.time_embed_dim
        z = np.repeat(base, m, axis=0).reshape(n_t, m, -1)
        z[:, :, off:] = embeds[None, :, off:]
        return predict_rows(self.params, z.reshape(n_t * m, -1)).reshape(n_t, m, self.data_dim)


class GaussianDenoiser(Denoiser):
    backend = "analytic_gaussian"

    def __init__(self, params: GaussianParams, schedule: NoiseSchedule):
        super().__init__(schedule, params.class_means.shape[0], params.class_means.shape[1])
        self.params = params

    def predict_many(self, x_t, ts, conds):
        x_t = np.asarray(x_t)
        self._validate(x_t, ts, conds)
        out = np.empty(x_t.shape, dtype=np.result_type(x_t.dtype, np.float32))
        for i, (t, c) in enumerate(zip(ts, conds)):
            out[i] = analytic_gaussian_predict(self.params, x_t[i], int(t), c, self.schedule)
        return out

    def predict_grid(self, x_ts, ts, conds):
        x_ts = np.asarray(x_ts)
        self._validate(x_ts, ts, [conds[0]] * len(ts))
        for c in conds:
            c.check(self.num_classes)
        out = np.empty((len(ts), len(conds), self.data_dim), dtype=np.result_type(x_ts.dtype, np.float32))
        for j, c in enumerate(conds):
            for i, t in enumerate(ts):
                out[i, j] = analytic_gaussian_predict(self.params, x_ts[i], int(t), c, self.schedule)
        return out


def predict_noise(model: Denoiser, x_t, t: int, cond: Condition) -> np.ndarray:
    """Noise prediction for a single input; output shape equals input shape."""
    return model.predict(x_t, t, cond)
