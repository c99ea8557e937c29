"""Pure-numpy recurrence kernels (reference implementation).

The time loop of the gated recurrent cell is the one piece of the model that
cannot be vectorized across frames; these two functions are its portable
fallback. The compiled twin in `_lstm_cy` implements the same math with the
same gate layout: stacked rows [input, forget, candidate, output], each block
`hidden` wide.
"""

import numpy as np


def _sigmoid(x):
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def lstm_loop_forward(xproj, wh, cell_clip, h0, c0):
    """Run the recurrence over a whole sequence.

    xproj: [T, 4H] input projections (x_t already multiplied by the stacked
           input weights), wh: [4H, H] stacked recurrent weights, h0/c0: [H]
           initial state. Returns (h, c, gates, tanhc, mask) where c is the
           clipped cell sequence and mask is 1.0 where the clip was inactive.
    """
    T, four_h = xproj.shape
    H = four_h // 4
    h = np.empty((T, H))
    c = np.empty((T, H))
    gates = np.empty((T, four_h))
    tanhc = np.empty((T, H))
    mask = np.empty((T, H))

    h_prev = h0
    c_prev = c0
    for t in range(T):
        a = xproj[t] + wh @ h_prev
        i = _sigmoid(a[:H])
        f = _sigmoid(a[H : 2 * H])
        g = np.tanh(a[2 * H : 3 * H])
        o = _sigmoid(a[3 * H :])
        c_raw = f * c_prev + i * g
        mask[t] = (np.abs(c_raw) <= cell_clip).astype(np.float64)
        c_t = np.clip(c_raw, -cell_clip, cell_clip)
        th = np.tanh(c_t)
        gates[t, :H] = i
        gates[t, H : 2 * H] = f
        gates[t, 2 * H : 3 * H] = g
        gates[t, 3 * H :] = o
        c[t] = c_t
        tanhc[t] = th
        h[t] = o * th
        h_prev = h[t]
        c_prev = c_t
    return h, c, gates, tanhc, mask


def lstm_loop_backward(wh, gates, c, tanhc, mask, c0, grad_h, grad_c_last):
    """Backward sweep matching `lstm_loop_forward`.

    Returns (da, grad_h0, grad_c0): da is [T, 4H] gradient at the pre-gate
    activations (same stacked layout), from which the caller forms the weight
    and input gradients with three dense products.
    """
    T, H = c.shape
    da = np.empty((T, 4 * H))
    carry_dh = np.zeros(H)
    carry_dc = grad_c_last.astype(np.float64).copy()
    for t in range(T - 1, -1, -1):
        i = gates[t, :H]
        f = gates[t, H : 2 * H]
        g = gates[t, 2 * H : 3 * H]
        o = gates[t, 3 * H :]
        c_prev = c0 if t == 0 else c[t - 1]
        dh = grad_h[t] + carry_dh
        dc = carry_dc + dh * o * (1.0 - tanhc[t] * tanhc[t])
        dc_raw = dc * mask[t]
        da[t, :H] = (dc_raw * g) * i * (1.0 - i)
        da[t, H : 2 * H] = (dc_raw * c_prev) * f * (1.0 - f)
        da[t, 2 * H : 3 * H] = (dc_raw * i) * (1.0 - g * g)
        da[t, 3 * H :] = (dh * tanhc[t]) * o * (1.0 - o)
        carry_dh = wh.T @ da[t]
        carry_dc = dc_raw * f
    return da, carry_dh, carry_dc
