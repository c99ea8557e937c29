"""Recurrence kernel selection: compiled extension when built, numpy otherwise.

The backend is chosen once at import (override with DISTILKIT_KERNEL=python or
=compiled); `set_kernel` exists so benchmarks and parity tests can switch
within a process. Both backends implement identical math, so results agree to
floating-point reassociation; a single process with a fixed backend is
bit-deterministic.
"""

import os

from ..errors import ConfigError
from . import lstm_np

_BACKENDS = {"python": lstm_np}

try:
    from . import _lstm_cy

    _BACKENDS["compiled"] = _lstm_cy
except ImportError:
    _lstm_cy = None


def _initial_choice():
    env = os.environ.get("DISTILKIT_KERNEL", "auto").strip().lower() or "auto"
    if env == "auto":
        return "compiled" if "compiled" in _BACKENDS else "python"
    if env not in _BACKENDS:
        built = ", ".join(sorted(_BACKENDS))
        raise ConfigError(f"DISTILKIT_KERNEL={env!r} is not available (built: {built}, or 'auto')")
    return env


_ACTIVE_NAME = _initial_choice()
_ACTIVE = _BACKENDS[_ACTIVE_NAME]


def available_kernels():
    return sorted(_BACKENDS)


def active_kernel():
    return _ACTIVE_NAME


def set_kernel(name):
    """Force a backend by name; mainly for benchmarks and parity tests."""
    global _ACTIVE, _ACTIVE_NAME
    if name not in _BACKENDS:
        raise ConfigError(f"kernel {name!r} not available; built: {available_kernels()}")
    _ACTIVE_NAME = name
    _ACTIVE = _BACKENDS[name]


def lstm_loop_forward(xproj, wh, cell_clip, h0, c0):
    return _ACTIVE.lstm_loop_forward(xproj, wh, cell_clip, h0, c0)


def lstm_loop_backward(wh, gates, c, tanhc, mask, c0, grad_h, grad_c_last):
    return _ACTIVE.lstm_loop_backward(wh, gates, c, tanhc, mask, c0, grad_h, grad_c_last)
