"""JIT switch for the numeric kernels.

Set ``MRCOORD_DISABLE_JIT=1`` to run every kernel through its pure-numpy
path. The flag is read once at import time.
"""
from __future__ import annotations

import os

_DISABLED = os.environ.get("MRCOORD_DISABLE_JIT", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None

USE_JIT = _numba is not None and not _DISABLED


def njit(*args, **kwargs):
    """``numba.njit(cache=True)`` when JIT is enabled, otherwise identity."""
    if not USE_JIT:
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f
    kwargs.setdefault("cache", True)
    if len(args) == 1 and callable(args[0]) and not kwargs.get("signature"):
        return _numba.njit(**kwargs)(args[0])
    return _numba.njit(*args, **kwargs)
