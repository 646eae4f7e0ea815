"""Conditional noise-prediction network with hand-written gradients.

The network sees ``[x_t ; time embedding ; class-set embedding]`` and runs it
through two swish hidden layers and a linear output layer.  Arrays are stored
in the parameter dtype (float32 by default); every matmul and reduction
accumulates in float64.
"""

from __future__ import annotations

import dataclasses
import functools
import math
from dataclasses import dataclass, field
from functools import cached_property


import numpy as np

from .errors import ConditionError, ContractError, ParameterError, ShapeError
from .schedule import Condition, NoiseSchedule

PARAM_NAMES = ("class_embed", "w_in", "b_in", "w_hid", "b_hid", "w_out", "b_out")
ACTIVATIONS = ("swish", "identity")


@dataclass(frozen=True, eq=False)
class NetParams:
    class_embed: np.ndarray  # (num_classes, e_c)
    w_in: np.ndarray  # (d + e_t + e_c, h)
    b_in: np.ndarray  # (h,)
    w_hid: np.ndarray  # (h, h)
    b_hid: np.ndarray  # (h,)
    w_out: np.ndarray  # (h, d)
    b_out: np.ndarray  # (d,)
    time_embed_dim: int
    activation: str = "swish"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ParameterError(f"activation must be one of {ACTIVATIONS}")
        if self.time_embed_dim % 2 or self.time_embed_dim <= 0:
            raise ParameterError("time_embed_dim must be a positive even integer")
        c, e_c = self.class_embed.shape
        h = self.b_in.shape[0]
        d = self.b_out.shape[0]
        expected = {
            "w_in": (d + self.time_embed_dim + e_c, h),
            "b_in": (h,),
            "w_hid": (h, h),
            "b_hid": (h,),
            "w_out": (h, d),
            "b_out": (d,),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ShapeError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        dtypes = {getattr(self, n).dtype for n in PARAM_NAMES}
        if len(dtypes) != 1:
            raise ShapeError(f"mixed parameter dtypes {dtypes}")
        for n in PARAM_NAMES:
            getattr(self, n).setflags(write=False)

    @property
    def data_dim(self) -> int:
        return self.b_out.shape[0]

    @property
    def hidden(self) -> int:
        return self.b_in.shape[0]

    @property
    def num_classes(self) -> int:
        return self.class_embed.shape[0]

    @property
    def class_embed_dim(self) -> int:
        return self.class_embed.shape[1]

    @property
    def dtype(self) -> np.dtype:
        return self.w_in.dtype

    @property
    def num_parameters(self) -> int:
        return sum(getattr(self, n).size for n in PARAM_NAMES)

    def arrays(self) -> dict[str, np.ndarray]:
        return {n: getattr(self, n) for n in PARAM_NAMES}

    def replace(self, **arrays) -> "NetParams":
        return dataclasses.replace(self, **arrays)

    def astype(self, dtype) -> "NetParams":
        return self.replace(**{n: a.astype(dtype) for n, a in self.arrays().items()})

    @cached_property
    def f64(self) -> dict[str, np.ndarray]:
        return {n: a.astype(np.float64) for n, a in self.arrays().items()}

    @cached_property
    def embedding_cache(self) -> dict:
        return {}

    @cached_property
    def kernel_weights(self) -> tuple[np.ndarray, ...]:
        f32 = np.float32
        return tuple(np.ascontiguousarray(getattr(self, n), dtype=f32) for n in PARAM_NAMES[1:])


@dataclass(frozen=True, eq=False)
class GradientBundle:
    class_embed: np.ndarray
    w_in: np.ndarray
    b_in: np.ndarray
    w_hid: np.ndarray
    b_hid: np.ndarray
    w_out: np.ndarray
    b_out: np.ndarray

    def arrays(self) -> dict[str, np.ndarray]:
        return {n: getattr(self, n) for n in PARAM_NAMES}


def init_params(
    d: int,
    h: int = 256,
    e_t: int = 32,
    e_c: int = 16,
    num_classes: int = 2,
    seed: int = 0,
    dtype=np.float32,
    activation: str = "swish",
) -> NetParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) hidden weights, zero output layer."""
    for name, v in (("d", d), ("h", h), ("e_t", e_t), ("e_c", e_c), ("num_classes", num_classes)):
        if int(v) != v or v < 1:
            raise ParameterError(f"{name} must be a positive integer, got {v!r}")
    if e_t % 2:
        raise ParameterError(f"e_t must be even, got {e_t}")
    rng = np.random.default_rng(seed)
    d_in = d + e_t + e_c

    def uniform(fan_in, shape):
        bound = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape).astype(dtype)

    return NetParams(
        class_embed=rng.standard_normal((num_classes, e_c)).astype(dtype),
        w_in=uniform(d_in, (d_in, h)),
        b_in=uniform(d_in, (h,)),
        w_hid=uniform(h, (h, h)),
        b_hid=uniform(h, (h,)),
        w_out=np.zeros((h, d), dtype=dtype),
        b_out=np.zeros(d, dtype=dtype),
        time_embed_dim=e_t,
        activation=activation,
    )


@functools.lru_cache(maxsize=8192)
def _time_embedding_cached(t: int, dim: int) -> tuple[float, ...]:
    out = []
    for k in range(dim // 2):
        arg = t / 10000.0 ** (2 * k / dim)
        out.extend((math.sin(arg), math.cos(arg)))
    return tuple(out)


def sinusoidal_time_embedding(t: int, dim: int, t_max: int | None = None) -> np.ndarray:
    if dim % 2 or dim <= 0:
        raise ParameterError(f"embedding dim must be a positive even integer, got {dim}")
    if t < 0 or (t_max is not None and t > t_max):
        raise ParameterError(f"timestep {t} outside [0, {t_max}]")
    return np.array(_time_embedding_cached(int(t), int(dim)), dtype=np.float64)


def class_set_embedding(params: NetParams, cond: Condition) -> np.ndarray:
    """Mean of the embedding rows named by ``cond``, independent of member order."""
    if not cond.classes:
        raise ConditionError("empty class set")
    cond.check(params.num_classes)
    rows = params.f64["class_embed"][sorted(cond.classes)]
    return rows.mean(axis=0).astype(params.dtype)


def _swish(a):
    return a / (1.0 + np.exp(-a))


def _swish_grad(a):
    s = 1.0 / (1.0 + np.exp(-a))
    return s + a * s * (1.0 - s)


def build_inputs(params: NetParams, x_t, ts, conds, schedule: NoiseSchedule | None = None) -> np.ndarray:
    """Stack ``[x_t ; time embedding ; class embedding]`` rows in the parameter dtype."""
    n = x_t.shape[0]
    d, e_t = params.data_dim, params.time_embed_dim
    ts = [int(t) for t in ts]
    t_max = schedule.t_max if schedule is not None else None
    if ts and (min(ts) < 0 or (t_max is not None and max(ts) > t_max)):
        raise ParameterError(f"timesteps must lie in [0, {t_max}]")
    z = np.empty((n, d + e_t + params.class_embed_dim), dtype=params.dtype)
    z[:, :d] = x_t
    z[:, d : d + e_t] = [_time_embedding_cached(t, e_t) for t in ts]
    cache = params.embedding_cache
    rows = []
    for c in conds:
        row = cache.get(c)
        if row is None:
            row = cache[c] = class_set_embedding(params, c)
        rows.append(row)
    z[:, d + e_t :] = rows
    return z


@dataclass(eq=False)
class ForwardCache:
    params: NetParams
    z: np.ndarray
    a1: np.ndarray
    h1: np.ndarray
    a2: np.ndarray
    h2: np.ndarray
    prediction: np.ndarray
    conds: list = field(default_factory=list)
    batched: bool = False


def _dense(inp, w64, b64):
    return inp.astype(np.float64) @ w64 + b64


def net_forward(params: NetParams, x_t, t, cond, schedule: NoiseSchedule | None = None):
    """Predict the injected noise for one input or a batch.

    ``x_t`` may be ``(d,)`` with scalar ``t`` and a single ``Condition``, or
    ``(n, d)`` with ``n`` timesteps and ``n`` conditions.  Returns the
    prediction and a cache for :func:`net_backward`.
    """
    x_t = np.asarray(x_t)
    batched = x_t.ndim == 2
    if not batched:
        if x_t.ndim != 1:
            raise ShapeError(f"x_t must be 1-d or 2-d, got shape {x_t.shape}")
        x_t = x_t[None, :]
        ts = [t]
        conds = [cond]
    else:
        ts = np.broadcast_to(np.asarray(t), (x_t.shape[0],))
        conds = [cond] * x_t.shape[0] if isinstance(cond, Condition) else list(cond)
        if len(conds) != x_t.shape[0]:
            raise ShapeError("one condition per row is required")
    if x_t.shape[1] != params.data_dim:
        raise ShapeError(f"x_t has {x_t.shape[1]} features, network expects {params.data_dim}")

    sd = params.dtype
    w = params.f64
    act = _swish if params.activation == "swish" else (lambda a: a)
    z = build_inputs(params, x_t, ts, conds, schedule)
    a1 = _dense(z, w["w_in"], w["b_in"])
    h1 = act(a1).astype(sd)
    a2 = _dense(h1, w["w_hid"], w["b_hid"])
    h2 = act(a2).astype(sd)
    pred = _dense(h2, w["w_out"], w["b_out"]).astype(sd)
    cache = ForwardCache(params, z, a1, h1, a2, h2, pred, conds, batched)
    return (pred if batched else pred[0]), cache


def net_backward(params: NetParams, cache: ForwardCache, eps_true):
    """Simple loss of the cached prediction and its exact parameter gradients."""
    if cache.params is not params:
        raise ContractError("forward cache was produced with different parameters")
    eps = np.asarray(eps_true, dtype=np.float64).reshape(cache.prediction.shape)
    w = params.f64
    n, d = cache.prediction.shape
    diff = cache.prediction.astype(np.float64) - eps
    loss = float(np.mean(diff * diff))
    g = 2.0 * diff / diff.size

    h2 = cache.h2.astype(np.float64)
    g_w_out = h2.T @ g
    g_b_out = g.sum(axis=0)
    dh2 = g @ w["w_out"].T

    if params.activation == "swish":
        da2 = dh2 * _swish_grad(cache.a2)
    else:
        da2 = dh2
    h1 = cache.h1.astype(np.float64)
    g_w_hid = h1.T @ da2
    g_b_hid = da2.sum(axis=0)
    dh1 = da2 @ w["w_hid"].T

    da1 = dh1 * _swish_grad(cache.a1) if params.activation == "swish" else dh1
    z = cache.z.astype(np.float64)
    g_w_in = z.T @ da1
    g_b_in = da1.sum(axis=0)
    dz = da1 @ w["w_in"].T

    e_off = d + params.time_embed_dim
    g_embed = np.zeros_like(w["class_embed"])
    dce = dz[:, e_off:]
    for i, cond in enumerate(cache.conds):
        idx = sorted(cond.classes)
        g_embed[idx] += dce[i] / len(idx)

    sd = params.dtype
    grads = GradientBundle(
        class_embed=g_embed.astype(sd),
        w_in=g_w_in.astype(sd),
        b_in=g_b_in.astype(sd),
        w_hid=g_w_hid.astype(sd),
        b_hid=g_b_hid.astype(sd),
        w_out=g_w_out.astype(sd),
        b_out=g_b_out.astype(sd),
    )
    return loss, grads


def predict_rows(params: NetParams, z: np.ndarray) -> np.ndarray:
    """Row-wise network output for prepared inputs; dispatches to the compiled kernel when possible."""
    from . import kernels

    return kernels.mlp_forward_rows(params, z)


