# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of the kernels in ``_ref``; same signatures, same math."""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, sqrt, tanh

cnp.import_array()


cdef inline double _sig(double x) nogil:
    return 1.0 / (1.0 + exp(-x))


def lstm_cell_fwd(double[:, ::1] preact, double[:, ::1] c_prev):
    cdef Py_ssize_t b = preact.shape[0]
    cdef Py_ssize_t h = preact.shape[1] // 4
    out_np = np.empty((b, h))
    c_np = np.empty((b, h))
    gates_np = np.empty((b, 4 * h))
    tanh_c_np = np.empty((b, h))
    cdef double[:, ::1] out = out_np
    cdef double[:, ::1] c = c_np
    cdef double[:, ::1] gates = gates_np
    cdef double[:, ::1] tanh_c = tanh_c_np
    cdef Py_ssize_t r, k
    cdef double i, f, g, o, cv, tc
    with nogil:
        for r in range(b):
            for k in range(h):
                i = _sig(preact[r, k])
                f = _sig(preact[r, h + k])
                g = tanh(preact[r, 2 * h + k])
                o = _sig(preact[r, 3 * h + k])
                cv = f * c_prev[r, k] + i * g
                tc = tanh(cv)
                gates[r, k] = i
                gates[r, h + k] = f
                gates[r, 2 * h + k] = g
                gates[r, 3 * h + k] = o
                c[r, k] = cv
                tanh_c[r, k] = tc
                out[r, k] = o * tc
    return out_np, c_np, gates_np, tanh_c_np


def lstm_cell_bwd(dh, dc, double[:, ::1] gates, double[:, ::1] tanh_c,
                  double[:, ::1] c_prev):
    cdef Py_ssize_t b = gates.shape[0]
    cdef Py_ssize_t h = gates.shape[1] // 4
    dpreact_np = np.empty((b, 4 * h))
    dc_prev_np = np.empty((b, h))
    cdef double[:, ::1] dpreact = dpreact_np
    cdef double[:, ::1] dc_prev = dc_prev_np
    cdef double[:, ::1] dh_v
    cdef double[:, ::1] dc_v
    cdef bint have_dh = dh is not None
    cdef bint have_dc = dc is not None
    if have_dh:
        dh_v = dh
    else:
        dh_v = np.empty((0, 0))
    if have_dc:
        dc_v = dc
    else:
        dc_v = np.empty((0, 0))
    cdef Py_ssize_t r, k
    cdef double i, f, g, o, tc, dct, do
    with nogil:
        for r in range(b):
            for k in range(h):
                i = gates[r, k]
                f = gates[r, h + k]
                g = gates[r, 2 * h + k]
                o = gates[r, 3 * h + k]
                tc = tanh_c[r, k]
                dct = dc_v[r, k] if have_dc else 0.0
                if have_dh:
                    do = dh_v[r, k] * tc
                    dct += dh_v[r, k] * o * (1.0 - tc * tc)
                else:
                    do = 0.0
                dpreact[r, k] = dct * g * i * (1.0 - i)
                dpreact[r, h + k] = dct * c_prev[r, k] * f * (1.0 - f)
                dpreact[r, 2 * h + k] = dct * i * (1.0 - g * g)
                dpreact[r, 3 * h + k] = do * o * (1.0 - o)
                dc_prev[r, k] = dct * f
    return dpreact_np, dc_prev_np


def layer_norm_fwd(double[:, ::1] x, double[::1] gain, double[::1] bias,
                   double eps, Py_ssize_t nblocks):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t d = x.shape[1]
    cdef Py_ssize_t h = d // nblocks
    y_np = np.empty((n, d))
    xhat_np = np.empty((n, d))
    inv_std_np = np.empty((n, nblocks))
    cdef double[:, ::1] y = y_np
    cdef double[:, ::1] xhat = xhat_np
    cdef double[:, ::1] inv_std = inv_std_np
    cdef Py_ssize_t r, blk, k, base
    cdef double mean, var, dev, istd, xh
    with nogil:
        for r in range(n):
            for blk in range(nblocks):
                base = blk * h
                mean = 0.0
                for k in range(h):
                    mean += x[r, base + k]
                mean /= h
                var = 0.0
                for k in range(h):
                    dev = x[r, base + k] - mean
                    var += dev * dev
                var /= h
                istd = 1.0 / sqrt(var + eps)
                inv_std[r, blk] = istd
                for k in range(h):
                    xh = (x[r, base + k] - mean) * istd
                    xhat[r, base + k] = xh
                    y[r, base + k] = xh * gain[base + k] + bias[base + k]
    return y_np, xhat_np, inv_std_np


def layer_norm_bwd(double[:, ::1] dy, double[:, ::1] xhat,
                   double[:, ::1] inv_std, double[::1] gain,
                   Py_ssize_t nblocks):
    cdef Py_ssize_t n = dy.shape[0]
    cdef Py_ssize_t d = dy.shape[1]
    cdef Py_ssize_t h = d // nblocks
    dx_np = np.empty((n, d))
    dgain_np = np.zeros(d)
    dbias_np = np.zeros(d)
    cdef double[:, ::1] dx = dx_np
    cdef double[::1] dgain = dgain_np
    cdef double[::1] dbias = dbias_np
    cdef Py_ssize_t r, blk, k, base
    cdef double m1, m2, dxh, istd
    with nogil:
        for r in range(n):
            for blk in range(nblocks):
                base = blk * h
                m1 = 0.0
                m2 = 0.0
                for k in range(h):
                    dxh = dy[r, base + k] * gain[base + k]
                    m1 += dxh
                    m2 += dxh * xhat[r, base + k]
                m1 /= h
                m2 /= h
                istd = inv_std[r, blk]
                for k in range(h):
                    dxh = dy[r, base + k] * gain[base + k]
                    dx[r, base + k] = (dxh - m1 - xhat[r, base + k] * m2) * istd
            for k in range(d):
                dgain[k] += dy[r, k] * xhat[r, k]
                dbias[k] += dy[r, k]
    return dx_np, dgain_np, dbias_np


def adam_update(double[::1] p, double[::1] g, double[::1] m, double[::1] v,
                double lr, double beta1, double beta2, double eps,
                double bc1, double bc2, double lam):
    cdef Py_ssize_t n = p.shape[0]
    cdef Py_ssize_t k
    cdef double ge
    with nogil:
        for k in range(n):
            ge = g[k] + lam * p[k]
            m[k] = beta1 * m[k] + (1.0 - beta1) * ge
            v[k] = beta2 * v[k] + (1.0 - beta2) * ge * ge
            p[k] -= lr * (m[k] * bc1) / (sqrt(v[k] * bc2) + eps)


cdef inline unsigned long long _rotl(unsigned long long x, int k) nogil:
    return (x << k) | (x >> (64 - k))


def xoshiro_fill(cnp.ndarray[cnp.uint64_t, ndim=1] state, double[::1] out):
    cdef unsigned long long s0 = state[0]
    cdef unsigned long long s1 = state[1]
    cdef unsigned long long s2 = state[2]
    cdef unsigned long long s3 = state[3]
    cdef unsigned long long result, t
    cdef Py_ssize_t n = out.shape[0]
    cdef Py_ssize_t idx
    cdef double scale = 2.0 ** -53
    with nogil:
        for idx in range(n):
            result = _rotl(s1 * 5ULL, 7) * 9ULL
            t = s1 << 17
            s2 ^= s0
            s3 ^= s1
            s1 ^= s2
            s0 ^= s3
            s2 ^= t
            s3 = _rotl(s3, 45)
            out[idx] = <double>(result >> 11) * scale
    state[0] = s0
    state[1] = s1
    state[2] = s2
    state[3] = s3
