"""Pure-numpy stand-ins for the compiled kernels.

Rows are processed one at a time so each output row is a function of its own
input row only, matching the compiled kernel's batch-independence.
"""

import numpy as np


def mlp_forward_rows(z, w_in, b_in, w_hid, b_hid, w_out, b_out, identity=False):
    """Weights are ``(fan_in, fan_out)``; returns ``(n, d)`` float32."""
    w1, w2, w3 = (np.asarray(w, dtype=np.float64).T for w in (w_in, w_hid, w_out))
    b1, b2, b3 = (np.asarray(b, dtype=np.float64) for b in (b_in, b_hid, b_out))
    if z.shape[1] != w1.shape[1]:
        raise ValueError("input width does not match the first layer")
    out = np.empty((z.shape[0], w3.shape[0]), dtype=np.float32)
    for r in range(z.shape[0]):
        a = w1 @ z[r].astype(np.float64) + b1
        h = (a if identity else a / (1.0 + np.exp(-a))).astype(np.float32)
        a = w2 @ h.astype(np.float64) + b2
        h = (a if identity else a / (1.0 + np.exp(-a))).astype(np.float32)
        out[r] = w3 @ h.astype(np.float64) + b3
    return out
