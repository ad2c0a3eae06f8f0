"""Hot-kernel backend selection.

The compiled extension is preferred when importable; the NumPy fallback
is always available. Selection happens once at import and can be forced
with ``TDCSS_KERNELS=cython|python|auto``. Code elsewhere calls the
kernels through this module's attributes (``kernels.relu_forward`` etc.)
so that :func:`use_backend` can rebind them, which the benchmark and the
parity tests rely on.
"""

import os

from . import _pykernels
from ..errors import ConfigError

_EXPORTED = (
    "relu_forward",
    "relu_backward",
    "leaky_relu_forward",
    "leaky_relu_backward",
    "adam_update",
    "softmax_rows",
    "softmax_xent_hard",
    "softmax_xent_soft",
)

try:
    from . import _cykernels
except ImportError:
    _cykernels = None

BACKEND = "uninitialized"


def available_backends():
    names = ["python"]
    if _cykernels is not None:
        names.insert(0, "cython")
    return names


def use_backend(name):
    """Bind the module-level kernel functions to one backend."""
    global BACKEND
    if name == "auto":
        name = "cython" if _cykernels is not None else "python"
    if name == "cython":
        if _cykernels is None:
            raise ConfigError(
                "cython kernel backend requested but the compiled module "
                "tdcss.kernels._cykernels is not importable"
            )
        impl = _cykernels
    elif name == "python":
        impl = _pykernels
    else:
        raise ConfigError(f"unknown kernel backend {name!r} "
                          "(expected auto, cython, or python)")
    for fn in _EXPORTED:
        globals()[fn] = getattr(impl, fn)
    BACKEND = name
    return name


use_backend(os.environ.get("TDCSS_KERNELS", "auto"))
