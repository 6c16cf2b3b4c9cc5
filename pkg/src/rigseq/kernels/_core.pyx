# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernel backend; contracts match _numpy.py exactly."""

from libc.math cimport exp as c_exp, pow as c_pow, sqrt as c_sqrt, tanh as c_tanh
from libc.math cimport INFINITY

import numpy as np

BACKEND_NAME = "compiled"


cdef inline double _sig(double x) noexcept nogil:
    cdef double e
    if x >= 0.0:
        return 1.0 / (1.0 + c_exp(-x))
    e = c_exp(x)
    return e / (1.0 + e)


def sigmoid(x):
    cdef double[:, :] xv = np.asarray(x, dtype=np.float64)
    out_arr = np.empty((xv.shape[0], xv.shape[1]))
    cdef double[:, ::1] ov = out_arr
    cdef Py_ssize_t i, j
    for i in range(xv.shape[0]):
        for j in range(xv.shape[1]):
            ov[i, j] = _sig(xv[i, j])
    return out_arr


def sigmoid_grad(y, dy):
    cdef double[:, :] yv = np.asarray(y, dtype=np.float64)
    cdef double[:, :] dv = np.asarray(dy, dtype=np.float64)
    out_arr = np.empty((yv.shape[0], yv.shape[1]))
    cdef double[:, ::1] ov = out_arr
    cdef Py_ssize_t i, j
    for i in range(yv.shape[0]):
        for j in range(yv.shape[1]):
            ov[i, j] = dv[i, j] * yv[i, j] * (1.0 - yv[i, j])
    return out_arr


def tanh(x):
    cdef double[:, :] xv = np.asarray(x, dtype=np.float64)
    out_arr = np.empty((xv.shape[0], xv.shape[1]))
    cdef double[:, ::1] ov = out_arr
    cdef Py_ssize_t i, j
    for i in range(xv.shape[0]):
        for j in range(xv.shape[1]):
            ov[i, j] = c_tanh(xv[i, j])
    return out_arr


def tanh_grad(y, dy):
    cdef double[:, :] yv = np.asarray(y, dtype=np.float64)
    cdef double[:, :] dv = np.asarray(dy, dtype=np.float64)
    out_arr = np.empty((yv.shape[0], yv.shape[1]))
    cdef double[:, ::1] ov = out_arr
    cdef Py_ssize_t i, j
    for i in range(yv.shape[0]):
        for j in range(yv.shape[1]):
            ov[i, j] = dv[i, j] * (1.0 - yv[i, j] * yv[i, j])
    return out_arr


def softmax_rows(x):
    cdef double[:, :] xv = np.asarray(x, dtype=np.float64)
    cdef Py_ssize_t rows = xv.shape[0], cols = xv.shape[1]
    out_arr = np.empty((rows, cols))
    cdef double[:, ::1] ov = out_arr
    cdef Py_ssize_t i, j
    cdef double m, total
    for i in range(rows):
        m = xv[i, 0]
        for j in range(1, cols):
            if xv[i, j] > m:
                m = xv[i, j]
        total = 0.0
        for j in range(cols):
            ov[i, j] = c_exp(xv[i, j] - m)
            total += ov[i, j]
        for j in range(cols):
            ov[i, j] /= total
    return out_arr


def softmax_rows_grad(y, dy):
    cdef double[:, :] yv = np.asarray(y, dtype=np.float64)
    cdef double[:, :] dv = np.asarray(dy, dtype=np.float64)
    cdef Py_ssize_t rows = yv.shape[0], cols = yv.shape[1]
    out_arr = np.empty((rows, cols))
    cdef double[:, ::1] ov = out_arr
    cdef Py_ssize_t i, j
    cdef double inner
    for i in range(rows):
        inner = 0.0
        for j in range(cols):
            inner += dv[i, j] * yv[i, j]
        for j in range(cols):
            ov[i, j] = yv[i, j] * (dv[i, j] - inner)
    return out_arr


def lstm_point_fwd(z, c_prev):
    cdef double[:, :] zv = np.asarray(z, dtype=np.float64)
    cdef double[:, :] cp = np.asarray(c_prev, dtype=np.float64)
    cdef Py_ssize_t b = zv.shape[0], d = zv.shape[1] // 4
    h_arr = np.empty((b, d))
    c_arr = np.empty((b, d))
    s_arr = np.empty((b, 5 * d))
    cdef double[:, ::1] hv = h_arr, cv = c_arr, sv = s_arr
    cdef Py_ssize_t i, j
    cdef double f, inp, o, g, c, tc
    for i in range(b):
        for j in range(d):
            f = _sig(zv[i, j])
            inp = _sig(zv[i, d + j])
            o = _sig(zv[i, 2 * d + j])
            g = c_tanh(zv[i, 3 * d + j])
            c = f * cp[i, j] + inp * g
            tc = c_tanh(c)
            hv[i, j] = o * tc
            cv[i, j] = c
            sv[i, j] = f
            sv[i, d + j] = inp
            sv[i, 2 * d + j] = o
            sv[i, 3 * d + j] = g
            sv[i, 4 * d + j] = tc
    return h_arr, c_arr, s_arr


def lstm_point_bwd(saved, c_prev, dh, dc):
    cdef double[:, :] sv = np.asarray(saved, dtype=np.float64)
    cdef double[:, :] cp = np.asarray(c_prev, dtype=np.float64)
    cdef double[:, :] dhv = np.asarray(dh, dtype=np.float64)
    cdef double[:, :] dcv = np.asarray(dc, dtype=np.float64)
    cdef Py_ssize_t b = sv.shape[0], d = sv.shape[1] // 5
    dz_arr = np.empty((b, 4 * d))
    dcp_arr = np.empty((b, d))
    cdef double[:, ::1] dzv = dz_arr, dcpv = dcp_arr
    cdef Py_ssize_t i, j
    cdef double f, inp, o, g, tc, dct
    for i in range(b):
        for j in range(d):
            f = sv[i, j]
            inp = sv[i, d + j]
            o = sv[i, 2 * d + j]
            g = sv[i, 3 * d + j]
            tc = sv[i, 4 * d + j]
            dct = dcv[i, j] + dhv[i, j] * o * (1.0 - tc * tc)
            dzv[i, j] = dct * cp[i, j] * f * (1.0 - f)
            dzv[i, d + j] = dct * g * inp * (1.0 - inp)
            dzv[i, 2 * d + j] = dhv[i, j] * tc * o * (1.0 - o)
            dzv[i, 3 * d + j] = dct * inp * (1.0 - g * g)
            dcpv[i, j] = dct * f
    return dz_arr, dcp_arr


def topk_rows(scores, Py_ssize_t k):
    cdef double[:, :] s = np.asarray(scores, dtype=np.float64)
    cdef Py_ssize_t rows = s.shape[0], n = s.shape[1]
    mask_arr = np.zeros((rows, n), dtype=np.uint8)
    cdef unsigned char[:, ::1] mv = mask_arr
    cdef Py_ssize_t r, i, pick, best
    cdef double bestval
    for r in range(rows):
        for pick in range(k):
            best = -1
            bestval = -INFINITY
            for i in range(n):
                # strict > keeps the lowest index on ties
                if mv[r, i] == 0 and (best < 0 or s[r, i] > bestval):
                    best = i
                    bestval = s[r, i]
            mv[r, best] = 1
    return mask_arr.view(np.bool_)


def adam_update(p, g, m, v, Py_ssize_t t, double lr, double beta1, double beta2,
                double eps):
    cdef double[:, ::1] pv = p
    cdef double[:, ::1] mv = m
    cdef double[:, ::1] vv = v
    cdef double[:, :] gv = np.asarray(g, dtype=np.float64)
    cdef double bc1 = 1.0 - c_pow(beta1, t)
    cdef double bc2 = 1.0 - c_pow(beta2, t)
    cdef Py_ssize_t i, j
    cdef double gij, mhat, vhat
    for i in range(pv.shape[0]):
        for j in range(pv.shape[1]):
            gij = gv[i, j]
            mv[i, j] = beta1 * mv[i, j] + (1.0 - beta1) * gij
            vv[i, j] = beta2 * vv[i, j] + (1.0 - beta2) * gij * gij
            mhat = mv[i, j] / bc1
            vhat = vv[i, j] / bc2
            pv[i, j] -= lr * mhat / (c_sqrt(vhat) + eps)
