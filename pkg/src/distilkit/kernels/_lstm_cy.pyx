# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled recurrence kernels; same contract and gate layout as lstm_np."""

import numpy as np

from libc.math cimport exp, fabs, tanh as ctanh


cdef inline double _sigmoid(double x) noexcept nogil:
    cdef double e = exp(-fabs(x))
    if x >= 0.0:
        return 1.0 / (1.0 + e)
    return e / (1.0 + e)


def lstm_loop_forward(double[:, ::1] xproj, double[:, ::1] wh, double cell_clip,
                      double[::1] h0, double[::1] c0):
    cdef Py_ssize_t T = xproj.shape[0]
    cdef Py_ssize_t G = xproj.shape[1]
    cdef Py_ssize_t H = G // 4

    h_arr = np.empty((T, H))
    c_arr = np.empty((T, H))
    gates_arr = np.empty((T, G))
    tanhc_arr = np.empty((T, H))
    mask_arr = np.empty((T, H))
    hprev_arr = np.array(h0, dtype=np.float64, copy=True)
    cprev_arr = np.array(c0, dtype=np.float64, copy=True)

    cdef double[:, ::1] h = h_arr
    cdef double[:, ::1] c = c_arr
    cdef double[:, ::1] gates = gates_arr
    cdef double[:, ::1] tanhc = tanhc_arr
    cdef double[:, ::1] mask = mask_arr
    cdef double[::1] hprev = hprev_arr
    cdef double[::1] cprev = cprev_arr

    cdef Py_ssize_t t, r, k
    cdef double acc, i, f, g, o, c_raw, c_t

    with nogil:
        for t in range(T):
            for r in range(G):
                acc = xproj[t, r]
                for k in range(H):
                    acc += wh[r, k] * hprev[k]
                gates[t, r] = acc
            for k in range(H):
                i = _sigmoid(gates[t, k])
                f = _sigmoid(gates[t, H + k])
                g = ctanh(gates[t, 2 * H + k])
                o = _sigmoid(gates[t, 3 * H + k])
                gates[t, k] = i
                gates[t, H + k] = f
                gates[t, 2 * H + k] = g
                gates[t, 3 * H + k] = o
                c_raw = f * cprev[k] + i * g
                if fabs(c_raw) <= cell_clip:
                    mask[t, k] = 1.0
                    c_t = c_raw
                else:
                    mask[t, k] = 0.0
                    c_t = cell_clip if c_raw > 0.0 else -cell_clip
                c[t, k] = c_t
                tanhc[t, k] = ctanh(c_t)
                h[t, k] = o * tanhc[t, k]
                hprev[k] = h[t, k]
                cprev[k] = c_t
    return h_arr, c_arr, gates_arr, tanhc_arr, mask_arr


def lstm_loop_backward(double[:, ::1] wh, double[:, ::1] gates,
                       double[:, ::1] c, double[:, ::1] tanhc,
                       double[:, ::1] mask, double[::1] c0,
                       double[:, ::1] grad_h, double[::1] grad_c_last):
    cdef Py_ssize_t T = c.shape[0]
    cdef Py_ssize_t H = c.shape[1]
    cdef Py_ssize_t G = 4 * H

    da_arr = np.empty((T, G))
    carry_dh_arr = np.zeros(H)
    carry_dc_arr = np.array(grad_c_last, dtype=np.float64, copy=True)
    dh_arr = np.empty(H)
    dcraw_arr = np.empty(H)

    cdef double[:, ::1] da = da_arr
    cdef double[::1] carry_dh = carry_dh_arr
    cdef double[::1] carry_dc = carry_dc_arr
    cdef double[::1] dh = dh_arr
    cdef double[::1] dcraw = dcraw_arr

    cdef Py_ssize_t t, r, k
    cdef double acc, i, f, g, o, dc, cp

    with nogil:
        for t in range(T - 1, -1, -1):
            for k in range(H):
                dh[k] = grad_h[t, k] + carry_dh[k]
                dc = carry_dc[k] + dh[k] * gates[t, 3 * H + k] * (1.0 - tanhc[t, k] * tanhc[t, k])
                dcraw[k] = dc * mask[t, k]
            for k in range(H):
                i = gates[t, k]
                f = gates[t, H + k]
                g = gates[t, 2 * H + k]
                o = gates[t, 3 * H + k]
                cp = c0[k] if t == 0 else c[t - 1, k]
                da[t, k] = (dcraw[k] * g) * i * (1.0 - i)
                da[t, H + k] = (dcraw[k] * cp) * f * (1.0 - f)
                da[t, 2 * H + k] = (dcraw[k] * i) * (1.0 - g * g)
                da[t, 3 * H + k] = (dh[k] * tanhc[t, k]) * o * (1.0 - o)
            for k in range(H):
                acc = 0.0
                for r in range(G):
                    acc += wh[r, k] * da[t, r]
                carry_dh[k] = acc
                carry_dc[k] = dcraw[k] * gates[t, H + k]
    return da_arr, carry_dh_arr, carry_dc_arr
