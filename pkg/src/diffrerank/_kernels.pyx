# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Row-wise forward pass of the noise-prediction network.

Each row is evaluated independently with a fixed float64 accumulation order,
so a row's output never depends on which other rows share the batch.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()


cdef inline double _act(double a, bint identity) noexcept nogil:
    if identity:
        return a
    return a / (1.0 + exp(-a))


cdef void _dense(const float* x, const float[:, ::1] w, const float[::1] b, double* acc,
                 float* out, bint apply_act, bint identity) noexcept nogil:
    # acc[o] accumulates x[0]*w[0, o], x[1]*w[1, o], ... in that order; the
    # inner loop runs across independent outputs, so it vectorizes without
    # reassociating any sum
    cdef Py_ssize_t n_in = w.shape[0]
    cdef Py_ssize_t n_out = w.shape[1]
    cdef Py_ssize_t i, o
    cdef double xi, a
    cdef const float* wi
    for o in range(n_out):
        acc[o] = 0.0
    for i in range(n_in):
        xi = x[i]
        wi = &w[i, 0]
        for o in range(n_out):
            acc[o] += xi * <double>wi[o]
    for o in range(n_out):
        a = acc[o] + <double>b[o]
        if apply_act:
            a = _act(a, identity)
        out[o] = <float>a


cdef void _dense4(const float* x, Py_ssize_t xs, const float[:, ::1] w, const float[::1] b,
                  double* acc, float* out, Py_ssize_t os, bint apply_act, bint identity) noexcept nogil:
    # four rows share each weight load; per-row summation order is identical to _dense
    cdef Py_ssize_t n_in = w.shape[0]
    cdef Py_ssize_t n_out = w.shape[1]
    cdef Py_ssize_t i, o, r
    cdef double x0, x1, x2, x3, wv, a
    cdef const float* wi
    cdef double* a0 = acc
    cdef double* a1 = acc + n_out
    cdef double* a2 = acc + 2 * n_out
    cdef double* a3 = acc + 3 * n_out
    for o in range(4 * n_out):
        acc[o] = 0.0
    for i in range(n_in):
        x0 = x[i]
        x1 = x[xs + i]
        x2 = x[2 * xs + i]
        x3 = x[3 * xs + i]
        wi = &w[i, 0]
        for o in range(n_out):
            wv = wi[o]
            a0[o] += x0 * wv
            a1[o] += x1 * wv
            a2[o] += x2 * wv
            a3[o] += x3 * wv
    for r in range(4):
        for o in range(n_out):
            a = acc[r * n_out + o] + <double>b[o]
            if apply_act:
                a = _act(a, identity)
            out[r * os + o] = <float>a


def mlp_forward_rows(const float[:, ::1] z,
                     const float[:, ::1] w_in, const float[::1] b_in,
                     const float[:, ::1] w_hid, const float[::1] b_hid,
                     const float[:, ::1] w_out, const float[::1] b_out,
                     bint identity=False):
    """Weights are ``(fan_in, fan_out)``; returns ``(n, d)`` float32."""
    cdef Py_ssize_t n = z.shape[0]
    cdef Py_ssize_t h = w_in.shape[1]
    cdef Py_ssize_t d = w_out.shape[1]
    if z.shape[1] != w_in.shape[0]:
        raise ValueError("input width does not match the first layer")
    out_arr = np.empty((n, d), dtype=np.float32)
    cdef float[:, ::1] out = out_arr
    cdef float[::1] h1 = np.empty(4 * h, dtype=np.float32)
    cdef float[::1] h2 = np.empty(4 * h, dtype=np.float32)
    cdef double[::1] acc = np.empty(4 * max(h, d), dtype=np.float64)
    cdef Py_ssize_t r = 0
    cdef Py_ssize_t zs = z.shape[1]
    if n == 0:
        return out_arr
    with nogil:
        while r + 4 <= n:
            _dense4(&z[r, 0], zs, w_in, b_in, &acc[0], &h1[0], h, True, identity)
            _dense4(&h1[0], h, w_hid, b_hid, &acc[0], &h2[0], h, True, identity)
            _dense4(&h2[0], h, w_out, b_out, &acc[0], &out[r, 0], d, False, identity)
            r += 4
        for r in range(r, n):
            _dense(&z[r, 0], w_in, b_in, &acc[0], &h1[0], True, identity)
            _dense(&h1[0], w_hid, b_hid, &acc[0], &h2[0], True, identity)
            _dense(&h2[0], w_out, b_out, &acc[0], &out[r, 0], False, identity)
    return out_arr
