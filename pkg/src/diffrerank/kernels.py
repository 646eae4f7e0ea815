"""Selects the compiled kernels when the extension is built, the numpy fallback otherwise.

Set ``DIFFRERANK_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os

import numpy as np

from . import _fallback

_compiled = None
if os.environ.get("DIFFRERANK_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        _compiled = None

BACKEND = "compiled" if _compiled is not None else "python"


def _impl(backend: str | None):
    backend = backend or BACKEND
    if backend == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not available in this build")
        return _compiled
    if backend == "python":
        return _fallback
    raise ValueError(f"unknown kernel backend {backend!r}")


def mlp_forward_rows(params, z: np.ndarray, backend: str | None = None) -> np.ndarray:
    """Network output for each row of prepared inputs ``z`` (float32 storage)."""
    z = np.ascontiguousarray(z, dtype=np.float32)
    return _impl(backend).mlp_forward_rows(
        z, *params.kernel_weights, identity=params.activation == "identity"
    )
