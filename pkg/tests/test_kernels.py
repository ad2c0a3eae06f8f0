"""Backend parity: the compiled kernels and the NumPy fallback must be
numerically interchangeable."""

import numpy as np
import pytest

from tdcss import kernels
from tdcss.kernels import _pykernels

cython = pytest.importorskip("tdcss.kernels._cykernels",
                             reason="compiled extension not built")

DTYPES = (np.float32, np.float64)


def pairs(rng, shape, dtype):
    return (rng.normal(size=shape).astype(dtype),
            rng.normal(size=shape).astype(dtype))


@pytest.mark.parametrize("dtype", DTYPES)
def test_activation_parity(dtype):
    rng = np.random.default_rng(0)
    x, g = pairs(rng, (17, 9), dtype)
    assert np.array_equal(cython.relu_forward(x), _pykernels.relu_forward(x))
    assert np.array_equal(cython.relu_backward(x, g),
                          _pykernels.relu_backward(x, g))
    assert np.allclose(cython.leaky_relu_forward(x, 0.2),
                       _pykernels.leaky_relu_forward(x, 0.2), rtol=1e-6)
    assert np.allclose(cython.leaky_relu_backward(x, g, 0.2),
                       _pykernels.leaky_relu_backward(x, g, 0.2), rtol=1e-6)


@pytest.mark.parametrize("dtype", DTYPES)
def test_softmax_parity(dtype):
    rng = np.random.default_rng(1)
    logits = (5 * rng.normal(size=(23, 7))).astype(dtype)
    labels = rng.integers(0, 7, size=23)
    pc = cython.softmax_rows(logits.copy())
    pp = _pykernels.softmax_rows(logits.copy())
    assert np.allclose(pc, pp, atol=1e-6)
    lc, gc = cython.softmax_xent_hard(logits.copy(), labels)
    lp, gp = _pykernels.softmax_xent_hard(logits.copy(), labels)
    assert lc == pytest.approx(lp, rel=1e-6)
    assert np.allclose(gc, gp, atol=1e-7)
    soft = rng.dirichlet(np.ones(7), size=23).astype(dtype)
    lc, gc = cython.softmax_xent_soft(logits.copy(), soft)
    lp, gp = _pykernels.softmax_xent_soft(logits.copy(), soft)
    assert lc == pytest.approx(lp, rel=1e-6)
    assert np.allclose(gc, gp, atol=1e-7)


@pytest.mark.parametrize("dtype", DTYPES)
def test_adam_parity(dtype):
    rng = np.random.default_rng(2)
    p1 = rng.normal(size=64).astype(dtype)
    p2 = p1.copy()
    g = rng.normal(size=64).astype(dtype)
    m1, v1 = np.zeros_like(p1), np.zeros_like(p1)
    m2, v2 = np.zeros_like(p2), np.zeros_like(p2)
    for t in range(1, 6):
        cython.adam_update(p1, g, m1, v1, t, 1e-3, 0.9, 0.999, 1e-8)
        _pykernels.adam_update(p2, g, m2, v2, t, 1e-3, 0.9, 0.999, 1e-8)
    assert np.allclose(p1, p2, rtol=1e-6, atol=1e-9)
    assert np.allclose(m1, m2, rtol=1e-6, atol=1e-9)
    assert np.allclose(v1, v2, rtol=1e-6, atol=1e-9)


def test_backend_selection_roundtrip():
    original = kernels.BACKEND
    try:
        kernels.use_backend("python")
        assert kernels.BACKEND == "python"
        x = np.array([[-1.0, 2.0]], np.float32)
        assert np.array_equal(kernels.relu_forward(x), [[0.0, 2.0]])
        kernels.use_backend("cython")
        assert kernels.BACKEND == "cython"
        assert np.array_equal(kernels.relu_forward(x), [[0.0, 2.0]])
    finally:
        kernels.use_backend(original)


def test_unknown_backend_rejected():
    from tdcss.errors import ConfigError
    with pytest.raises(ConfigError):
        kernels.use_backend("fortran")
