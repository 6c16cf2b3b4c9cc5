"""Pure numpy implementations of the hot per-timestep kernels.

Every function here has a signature-compatible compiled twin in
``_core.pyx``; the package selects one implementation at import time.
All arrays are float64 and batch-first 2-D unless stated otherwise.
"""

import numpy as np

BACKEND_NAME = "numpy"


def sigmoid(x):
    out = np.empty_like(x)
    np.negative(np.abs(x), out=out)
    np.exp(out, out=out)
    # stable split: 1/(1+e^-x) for x>=0, e^x/(1+e^x) for x<0
    pos = x >= 0
    out = np.where(pos, 1.0 / (1.0 + out), out / (1.0 + out))
    return out


def sigmoid_grad(y, dy):
    return dy * y * (1.0 - y)


def tanh(x):
    return np.tanh(x)


def tanh_grad(y, dy):
    return dy * (1.0 - y * y)


def softmax_rows(x):
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows_grad(y, dy):
    inner = (dy * y).sum(axis=1, keepdims=True)
    return y * (dy - inner)


def lstm_point_fwd(z, c_prev):
    """Fused LSTM gate pointwise step.

    z holds gate preactivations as (B, 4d) columns ordered
    [forget, input, output, candidate]. Returns (h, c, saved) where
    saved = (B, 5d) activated gates plus tanh(c) for the backward pass.
    """
    b, four_d = z.shape
    d = four_d // 4
    f = sigmoid(z[:, 0 * d : 1 * d])
    i = sigmoid(z[:, 1 * d : 2 * d])
    o = sigmoid(z[:, 2 * d : 3 * d])
    g = np.tanh(z[:, 3 * d : 4 * d])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    saved = np.empty((b, 5 * d), dtype=z.dtype)
    saved[:, 0 * d : 1 * d] = f
    saved[:, 1 * d : 2 * d] = i
    saved[:, 2 * d : 3 * d] = o
    saved[:, 3 * d : 4 * d] = g
    saved[:, 4 * d : 5 * d] = tc
    return h, c, saved


def lstm_point_bwd(saved, c_prev, dh, dc):
    """Backward of lstm_point_fwd. Returns (dz, dc_prev)."""
    b, five_d = saved.shape
    d = five_d // 5
    f = saved[:, 0 * d : 1 * d]
    i = saved[:, 1 * d : 2 * d]
    o = saved[:, 2 * d : 3 * d]
    g = saved[:, 3 * d : 4 * d]
    tc = saved[:, 4 * d : 5 * d]
    dc_tot = dc + dh * o * (1.0 - tc * tc)
    dz = np.empty((b, 4 * d), dtype=saved.dtype)
    dz[:, 0 * d : 1 * d] = dc_tot * c_prev * f * (1.0 - f)
    dz[:, 1 * d : 2 * d] = dc_tot * g * i * (1.0 - i)
    dz[:, 2 * d : 3 * d] = dh * tc * o * (1.0 - o)
    dz[:, 3 * d : 4 * d] = dc_tot * i * (1.0 - g * g)
    dc_prev = dc_tot * f
    return dz, dc_prev


def topk_rows(scores, k):
    """Boolean mask (same shape) keeping the k largest entries per row.

    Ties break toward the lowest column index: a stable sort of the
    negated scores visits equal values in original column order.
    """
    order = np.argsort(-scores, axis=1, kind="stable")
    mask = np.zeros(scores.shape, dtype=bool)
    rows = np.arange(scores.shape[0])[:, None]
    mask[rows, order[:, :k]] = True
    return mask


def adam_update(p, g, m, v, t, lr, beta1, beta2, eps):
    """One Adam step, updating p, m, v in place."""
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    mhat = m / (1.0 - beta1**t)
    vhat = v / (1.0 - beta2**t)
    p -= lr * mhat / (np.sqrt(vhat) + eps)
