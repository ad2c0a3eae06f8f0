"""Dense-network numeric substrate.

Matrices are plain C-contiguous numpy arrays (float32 for training,
float64 for gradient checking); this module owns layers, activations,
softmax cross-entropy, the ADAM optimizer, and finite-difference
gradient verification. The per-element hot loops live in
:mod:`tdcss.kernels` behind a swappable backend.
"""

import numpy as np

from . import kernels as K
from .errors import LabelRangeError, NumericError, ShapeError, UsageError

LEAKY_SLOPE = 0.2
ACTIVATIONS = ("relu", "leaky_relu", "identity")


def ensure_finite(op_name, *arrays):
    """Abort with NumericError if any array holds NaN/Inf."""
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericError(f"non-finite values produced by {op_name}")


def ensure_2d(op_name, x):
    if x.ndim != 2:
        raise ShapeError(f"{op_name} expects a 2-D array, got shape {x.shape}")


def glorot_uniform(rng, d_in, d_out, dtype=np.float32):
    bound = np.sqrt(6.0 / (d_in + d_out))
    return rng.uniform(-bound, bound, size=(d_in, d_out)).astype(dtype)


class DenseLayer:
    """Affine map plus a fixed activation tag.

    weight has shape (in_dim, out_dim); the activation is immutable
    after construction.
    """

    def __init__(self, weight, bias, activation="relu", use_bias=True):
        if activation not in ACTIVATIONS:
            raise UsageError(f"unknown activation {activation!r}")
        if use_bias and bias.shape != (weight.shape[1],):
            raise ShapeError(
                f"bias shape {bias.shape} does not match weight {weight.shape}")
        self.weight = weight
        self.bias = bias
        self.activation = activation
        self.use_bias = use_bias

    @classmethod
    def create(cls, rng, d_in, d_out, activation="relu", dtype=np.float32,
               use_bias=True):
        return cls(glorot_uniform(rng, d_in, d_out, dtype),
                   np.zeros(d_out, dtype=dtype), activation, use_bias)

    @property
    def in_dim(self):
        return self.weight.shape[0]

    @property
    def out_dim(self):
        return self.weight.shape[1]

    def params(self):
        return [self.weight, self.bias] if self.use_bias else [self.weight]

    def forward(self, x):
        """Return (activated output, cache for backward)."""
        ensure_2d("dense_forward", x)
        if x.shape[1] != self.in_dim:
            raise ShapeError(
                f"dense_forward: input shape {x.shape} incompatible with "
                f"weight shape {self.weight.shape}")
        z = x @ self.weight
        if self.use_bias:
            z += self.bias
        if self.activation == "relu":
            y = K.relu_forward(z)
        elif self.activation == "leaky_relu":
            y = K.leaky_relu_forward(z, LEAKY_SLOPE)
        else:
            y = z
        return y, (x, z)

    def backward(self, grad_out, cache):
        """Reverse the forward pass; returns (grad_in, param grads)."""
        if cache is None:
            raise UsageError("dense_backward called without a forward cache")
        x, z = cache
        if grad_out.shape != z.shape:
            raise ShapeError(
                f"dense_backward: grad shape {grad_out.shape} does not match "
                f"forward output shape {z.shape}")
        if self.activation == "relu":
            dz = K.relu_backward(z, grad_out)
        elif self.activation == "leaky_relu":
            dz = K.leaky_relu_backward(z, grad_out, LEAKY_SLOPE)
        else:
            dz = grad_out
        grad_w = x.T @ dz
        grad_in = dz @ self.weight.T
        if self.use_bias:
            return grad_in, [grad_w, dz.sum(axis=0)]
        return grad_in, [grad_w]

    def astype(self, dtype):
        return DenseLayer(self.weight.astype(dtype), self.bias.astype(dtype),
                          self.activation, self.use_bias)


class Net:
    """A stack of dense layers with explicit forward/backward."""

    def __init__(self, layers, name="net"):
        self.layers = layers
        self.name = name

    @classmethod
    def create(cls, rng, sizes, activations, name="net", dtype=np.float32,
               use_bias=True):
        if len(activations) != len(sizes) - 1:
            raise UsageError(
                f"{name}: {len(sizes) - 1} layers need {len(sizes) - 1} "
                f"activations, got {len(activations)}")
        layers = [
            DenseLayer.create(rng, sizes[i], sizes[i + 1], activations[i],
                              dtype, use_bias)
            for i in range(len(sizes) - 1)
        ]
        return cls(layers, name)

    @property
    def in_dim(self):
        return self.layers[0].in_dim

    @property
    def out_dim(self):
        return self.layers[-1].out_dim

    def params(self):
        out = []
        for layer in self.layers:
            out.extend(layer.params())
        return out

    def forward(self, x):
        caches = []
        for layer in self.layers:
            x, cache = layer.forward(x)
            caches.append(cache)
        ensure_finite(f"{self.name}.forward", x)
        return x, caches

    def backward(self, grad_out, caches):
        """Returns (grad wrt input, grads aligned with params())."""
        if caches is None or len(caches) != len(self.layers):
            raise UsageError(f"{self.name}.backward needs the forward cache")
        grads = []
        for layer, cache in zip(reversed(self.layers), reversed(caches)):
            grad_out, layer_grads = layer.backward(grad_out, cache)
            grads = layer_grads + grads
        return grad_out, grads

    def astype(self, dtype):
        return Net([l.astype(dtype) for l in self.layers], self.name)


def zero_grads(params):
    return [np.zeros_like(p) for p in params]


def add_grads(a, b):
    return [ga + gb for ga, gb in zip(a, b)]


def scale_grads(grads, c):
    if c == 1.0:
        return grads
    return [g * g.dtype.type(c) for g in grads]


def softmax_ce(logits, target):
    """Mean softmax cross-entropy and its logit gradient.

    ``target`` is either an integer label per row or a matrix of
    probability rows (soft labels, each summing to 1 within 1e-6).
    """
    ensure_2d("softmax_ce", logits)
    n, c = logits.shape
    target = np.asarray(target)
    if target.ndim == 1:
        if not np.issubdtype(target.dtype, np.integer):
            raise UsageError("hard labels must be integers")
        if target.shape[0] != n:
            raise ShapeError(
                f"softmax_ce: {n} logit rows but {target.shape[0]} labels")
        if target.size and (target.min() < 0 or target.max() >= c):
            bad = int(target[(target < 0) | (target >= c)][0])
            raise LabelRangeError(
                f"label {bad} outside the {c} scored classes")
        loss, grad = K.softmax_xent_hard(
            np.ascontiguousarray(logits), np.ascontiguousarray(target, np.int64))
    elif target.ndim == 2:
        if target.shape != logits.shape:
            raise ShapeError(
                f"softmax_ce: soft labels {target.shape} vs logits {logits.shape}")
        sums = target.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > 1e-6):
            raise UsageError("soft label rows must each sum to 1 (±1e-6)")
        loss, grad = K.softmax_xent_soft(
            np.ascontiguousarray(logits),
            np.ascontiguousarray(target, logits.dtype))
    else:
        raise UsageError("target must be label vector or probability matrix")
    ensure_finite("softmax_ce", np.asarray(loss), grad)
    return loss, grad


class Adam:
    """Bias-corrected ADAM over an explicit parameter list, in place."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, grads, lr=None):
        if len(grads) != len(self.params):
            raise ShapeError(
                f"adam_step: {len(self.params)} params but {len(grads)} grads")
        self.t += 1
        lr = self.lr if lr is None else lr
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if g.shape != p.shape:
                raise ShapeError(
                    f"adam_step: grad shape {g.shape} vs param shape {p.shape}")
            K.adam_update(p.ravel(), np.ascontiguousarray(g, p.dtype).ravel(),
                          m.ravel(), v.ravel(), self.t, lr,
                          self.beta1, self.beta2, self.eps)

    def state_arrays(self):
        """Moment arrays for checkpointing, aligned with params."""
        return self.m, self.v


def grad_check(fn, params, eps=1e-5, max_coords=10_000, seed=0):
    """Max relative error between fn's analytic grads and central differences.

    ``fn`` takes no arguments, reads ``params`` (which it may share), and
    returns (scalar loss, grads aligned with params). Above ``max_coords``
    total coordinates a seeded random subset is checked. Use float64
    parameters; float32 cannot hit the documented tolerances.
    """
    loss0, analytic = fn()
    if not np.isfinite(loss0):
        raise NumericError("grad_check: loss is not finite")
    coords = [(i, j) for i, p in enumerate(params) for j in range(p.size)]
    if len(coords) > max_coords:
        rng = np.random.default_rng(seed)
        picked = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[k] for k in picked]
    worst = 0.0
    for i, j in coords:
        flat = params[i].ravel()
        orig = flat[j]
        flat[j] = orig + eps
        lp = fn()[0]
        flat[j] = orig - eps
        lm = fn()[0]
        flat[j] = orig
        if not (np.isfinite(lp) and np.isfinite(lm)):
            raise NumericError("grad_check: perturbed loss is not finite")
        fd = (lp - lm) / (2 * eps)
        an = analytic[i].ravel()[j]
        rel = abs(an - fd) / max(1e-6, abs(an), abs(fd))
        worst = max(worst, rel)
    return worst
