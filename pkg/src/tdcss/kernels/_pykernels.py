"""NumPy implementations of the hot per-step kernels.

The compiled extension in ``_cykernels.pyx`` mirrors this module function
for function; the two must stay numerically interchangeable (see
tests/test_kernels.py). Everything here assumes C-contiguous float32 or
float64 arrays.
"""

import numpy as np

BACKEND = "python"


def relu_forward(x):
    return np.maximum(x, 0.0, dtype=x.dtype)


def relu_backward(pre, grad_out):
    return np.where(pre > 0, grad_out, 0.0).astype(pre.dtype, copy=False)


def leaky_relu_forward(x, slope):
    return np.where(x > 0, x, x * x.dtype.type(slope))


def leaky_relu_backward(pre, grad_out, slope):
    return np.where(pre > 0, grad_out, grad_out * pre.dtype.type(slope))


def adam_update(param, grad, m, v, t, lr, beta1, beta2, eps):
    """One bias-corrected moment update, in place on param/m/v."""
    dt = param.dtype.type
    b1, b2 = dt(beta1), dt(beta2)
    m *= b1
    m += (dt(1) - b1) * grad
    v *= b2
    v += (dt(1) - b2) * grad * grad
    c1 = dt(1) - dt(beta1) ** t
    c2 = dt(1) - dt(beta2) ** t
    mh = m / c1
    vh = v / c2
    param -= dt(lr) * mh / (np.sqrt(vh) + dt(eps))


def softmax_rows(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_xent_hard(logits, labels):
    """Mean cross-entropy of softmax(logits) against integer column labels.

    Returns (loss, grad_logits) with grad = (softmax - onehot) / n.
    """
    n = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(logz - shifted[np.arange(n), labels]))
    grad = softmax_rows(logits)
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    return loss, grad.astype(logits.dtype, copy=False)


def softmax_xent_soft(logits, targets):
    """Mean cross-entropy of softmax(logits) against probability rows."""
    n = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(logz - (targets * shifted).sum(axis=1)))
    grad = (softmax_rows(logits) - targets) / n
    return loss, grad.astype(logits.dtype, copy=False)
