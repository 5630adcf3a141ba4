"""Kernel backend selection.

The env var ATTNDISTILL_BACKEND picks the implementation of the hot
kernels: "numpy" (pure-numpy fallback), "numba" (all loops jitted),
"mixed", or "auto". The mixed profile is the default when numba
imports: convolution stays on the BLAS-backed numpy path, which beats
scalar jit loops at realistic widths, while pooling and the bilinear
warp gather/scatter run jitted, where numpy's fancy-indexing/add.at
fallback is several times slower (see benchmarks/bench_backends.py).

Tests and the benchmark switch at runtime with set_backend(). Results
are deterministic within a backend; across backends they agree to float
tolerance, not bit-exactly.
"""

import os
from types import SimpleNamespace

from . import kernels_numpy

ENV_VAR = "ATTNDISTILL_BACKEND"

_KERNELS = (
    "conv3x3_forward",
    "conv3x3_input_grad",
    "conv3x3_weight_grad",
    "avgpool3x3s2_forward",
    "avgpool3x3s2_backward",
    "maxpool3x3s2_forward",
    "maxpool3x3s2_backward",
    "bilinear_gather",
    "bilinear_scatter",
)

_CONV_KERNELS = ("conv3x3_forward", "conv3x3_input_grad", "conv3x3_weight_grad")

_active = None


def _mixed():
    from . import kernels_numba

    parts = {
        name: getattr(kernels_numpy if name in _CONV_KERNELS else kernels_numba, name)
        for name in _KERNELS
    }
    return SimpleNamespace(NAME="mixed", **parts)


def _load(name):
    if name == "numpy":
        return kernels_numpy
    if name == "numba":
        from . import kernels_numba

        return kernels_numba
    if name == "mixed":
        return _mixed()
    raise ValueError(
        f"unknown backend {name!r} (use 'numpy', 'numba', 'mixed', or 'auto')"
    )


def _resolve_auto():
    try:
        return _load("mixed")
    except ImportError:
        return kernels_numpy


def set_backend(name):
    """Force a backend by name; returns the module now in use."""
    global _active
    _active = _resolve_auto() if name == "auto" else _load(name)
    return _active


def active():
    """The kernel module in use, resolving ATTNDISTILL_BACKEND on first call."""
    global _active
    if _active is None:
        set_backend(os.environ.get(ENV_VAR, "auto").strip().lower())
    return _active


def backend_name():
    return active().NAME
