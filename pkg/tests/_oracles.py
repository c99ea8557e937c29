"""Independent reference implementations used only by the tests.

These deliberately avoid the library's own code paths: matmul is a triple
loop, the recurrent step is transcribed scalar by scalar from its defining
equations, truncation is a brute-force prefix scan, and gradients come from
central finite differences over a packed parameter vector.
"""

import math

import numpy as np

from distilkit import layers


def naive_matmul(a, b):
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def scalar_sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


def scalar_lstm_step(p, x, h_prev, c_prev):
    """One recurrent step, scalar arithmetic only: gates through the logistic
    function, candidate through tanh, cell = f*c_prev + i*candidate clipped to
    +-cell_clip, output = o * tanh(clipped cell)."""
    H = p.hidden
    i = [scalar_sigmoid(sum(p.w_xi[r][k] * x[k] for k in range(len(x)))
                        + sum(p.w_hi[r][k] * h_prev[k] for k in range(H)))
         for r in range(H)]
    f = [scalar_sigmoid(sum(p.w_xf[r][k] * x[k] for k in range(len(x)))
                        + sum(p.w_hf[r][k] * h_prev[k] for k in range(H)))
         for r in range(H)]
    cand = [math.tanh(sum(p.w_xc[r][k] * x[k] for k in range(len(x)))
                      + sum(p.w_hc[r][k] * h_prev[k] for k in range(H)))
            for r in range(H)]
    o = [scalar_sigmoid(sum(p.w_xo[r][k] * x[k] for k in range(len(x)))
                        + sum(p.w_ho[r][k] * h_prev[k] for k in range(H)))
         for r in range(H)]
    c = [f[r] * c_prev[r] + i[r] * cand[r] for r in range(H)]
    c = [max(-p.cell_clip, min(p.cell_clip, v)) for v in c]
    h = [o[r] * math.tanh(c[r]) for r in range(H)]
    return np.array(h), np.array(c), (np.array(i), np.array(f), np.array(o))


def truncate_oracle(dist, threshold):
    """Brute-force shortest prefix by (prob desc, id asc) reaching threshold."""
    order = sorted(range(len(dist)), key=lambda j: (-dist[j], j))
    order = [j for j in order if dist[j] > 0]
    total = sum(dist[j] for j in order)
    target = min(threshold, total) - 1e-12
    cum = 0.0
    kept = []
    for j in order:
        kept.append(j)
        cum += dist[j]
        if cum >= target:
            break
    mass = sum(dist[j] for j in kept)
    return kept, [dist[j] / mass for j in kept], mass


def random_lstm_params(rng, hidden, input_dim, scale=0.4, cell_clip=3.0):
    mats = []
    for name in layers.LSTM_MATRIX_NAMES:
        shape = (hidden, input_dim) if name.startswith("w_x") else (hidden, hidden)
        mats.append(scale * rng.standard_normal(shape))
    return layers.LstmParams.from_matrices(mats, cell_clip=cell_clip)


def fd_gradient(loss_of_vector, vec, eps=1e-5):
    """Central finite differences of a scalar function over a flat vector."""
    grad = np.empty_like(vec)
    for j in range(len(vec)):
        up = vec.copy()
        up[j] += eps
        down = vec.copy()
        down[j] -= eps
        grad[j] = (loss_of_vector(up) - loss_of_vector(down)) / (2.0 * eps)
    return grad


def rel_error(a, b):
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    denom = max(na, nb, 1e-12)
    return np.linalg.norm(a - b) / denom


def fd_check_params(spec, params, loss_of_params, eps=1e-5):
    """Finite-difference gradient over every model parameter."""
    vec = layers.params_to_vector(params)

    def loss_of_vec(v):
        return loss_of_params(layers.params_from_vector(spec, v))

    return fd_gradient(loss_of_vec, vec, eps=eps)
