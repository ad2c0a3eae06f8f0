# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the kernels in ``_pykernels.py``.

Fused single/double versions; rowwise reductions accumulate in double.
"""

import numpy as np

cimport cython
from libc.math cimport exp, log, sqrt

BACKEND = "cython"

ctypedef fused floating:
    float
    double


def relu_forward(floating[:, ::1] x):
    cdef Py_ssize_t i, j, n = x.shape[0], d = x.shape[1]
    out_arr = np.empty((n, d), dtype=np.asarray(x).dtype)
    cdef floating[:, ::1] out = out_arr
    with nogil:
        for i in range(n):
            for j in range(d):
                out[i, j] = x[i, j] if x[i, j] > 0 else 0
    return out_arr


def relu_backward(floating[:, ::1] pre, floating[:, ::1] grad_out):
    cdef Py_ssize_t i, j, n = pre.shape[0], d = pre.shape[1]
    out_arr = np.empty((n, d), dtype=np.asarray(pre).dtype)
    cdef floating[:, ::1] out = out_arr
    with nogil:
        for i in range(n):
            for j in range(d):
                out[i, j] = grad_out[i, j] if pre[i, j] > 0 else 0
    return out_arr


def leaky_relu_forward(floating[:, ::1] x, double slope):
    cdef Py_ssize_t i, j, n = x.shape[0], d = x.shape[1]
    cdef floating s = <floating> slope
    out_arr = np.empty((n, d), dtype=np.asarray(x).dtype)
    cdef floating[:, ::1] out = out_arr
    with nogil:
        for i in range(n):
            for j in range(d):
                out[i, j] = x[i, j] if x[i, j] > 0 else x[i, j] * s
    return out_arr


def leaky_relu_backward(floating[:, ::1] pre, floating[:, ::1] grad_out,
                        double slope):
    cdef Py_ssize_t i, j, n = pre.shape[0], d = pre.shape[1]
    cdef floating s = <floating> slope
    out_arr = np.empty((n, d), dtype=np.asarray(pre).dtype)
    cdef floating[:, ::1] out = out_arr
    with nogil:
        for i in range(n):
            for j in range(d):
                out[i, j] = grad_out[i, j] if pre[i, j] > 0 else grad_out[i, j] * s
    return out_arr


def adam_update(floating[::1] param, floating[::1] grad,
                floating[::1] m, floating[::1] v,
                long t, double lr, double beta1, double beta2, double eps):
    cdef Py_ssize_t i, n = param.shape[0]
    cdef floating b1 = <floating> beta1
    cdef floating b2 = <floating> beta2
    cdef floating one = <floating> 1.0
    cdef floating flr = <floating> lr
    cdef floating feps = <floating> eps
    cdef floating c1 = one - <floating> (beta1 ** t)
    cdef floating c2 = one - <floating> (beta2 ** t)
    cdef floating g, mh, vh
    with nogil:
        for i in range(n):
            g = grad[i]
            m[i] = b1 * m[i] + (one - b1) * g
            v[i] = b2 * v[i] + (one - b2) * g * g
            mh = m[i] / c1
            vh = v[i] / c2
            param[i] = param[i] - flr * mh / (<floating> sqrt(vh) + feps)


def softmax_rows(floating[:, ::1] logits):
    cdef Py_ssize_t i, j, n = logits.shape[0], c = logits.shape[1]
    out_arr = np.empty((n, c), dtype=np.asarray(logits).dtype)
    cdef floating[:, ::1] out = out_arr
    cdef double mx, z
    with nogil:
        for i in range(n):
            mx = logits[i, 0]
            for j in range(1, c):
                if logits[i, j] > mx:
                    mx = logits[i, j]
            z = 0.0
            for j in range(c):
                out[i, j] = <floating> exp(logits[i, j] - mx)
                z += out[i, j]
            for j in range(c):
                out[i, j] = <floating> (out[i, j] / z)
    return out_arr


def softmax_xent_hard(floating[:, ::1] logits, long[::1] labels):
    cdef Py_ssize_t i, j, n = logits.shape[0], c = logits.shape[1]
    grad_arr = np.empty((n, c), dtype=np.asarray(logits).dtype)
    cdef floating[:, ::1] grad = grad_arr
    cdef double mx, z, loss = 0.0
    cdef double inv_n = 1.0 / n
    with nogil:
        for i in range(n):
            mx = logits[i, 0]
            for j in range(1, c):
                if logits[i, j] > mx:
                    mx = logits[i, j]
            z = 0.0
            for j in range(c):
                grad[i, j] = <floating> exp(logits[i, j] - mx)
                z += grad[i, j]
            loss += log(z) - (logits[i, labels[i]] - mx)
            for j in range(c):
                grad[i, j] = <floating> (grad[i, j] / z * inv_n)
            grad[i, labels[i]] -= <floating> inv_n
    return loss * inv_n, grad_arr


def softmax_xent_soft(floating[:, ::1] logits, floating[:, ::1] targets):
    cdef Py_ssize_t i, j, n = logits.shape[0], c = logits.shape[1]
    grad_arr = np.empty((n, c), dtype=np.asarray(logits).dtype)
    cdef floating[:, ::1] grad = grad_arr
    cdef double mx, z, dot, loss = 0.0
    cdef double inv_n = 1.0 / n
    with nogil:
        for i in range(n):
            mx = logits[i, 0]
            for j in range(1, c):
                if logits[i, j] > mx:
                    mx = logits[i, j]
            z = 0.0
            dot = 0.0
            for j in range(c):
                grad[i, j] = <floating> exp(logits[i, j] - mx)
                z += grad[i, j]
                dot += targets[i, j] * (logits[i, j] - mx)
            loss += log(z) - dot
            for j in range(c):
                grad[i, j] = <floating> ((grad[i, j] / z - targets[i, j]) * inv_n)
    return loss * inv_n, grad_arr
