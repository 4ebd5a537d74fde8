"""Picks the conv2d kernel implementation at import time.

The compiled extension is used when it was built; ``ROADCOTRAIN_BACKEND=python``
forces the numpy fallback.
"""
from __future__ import annotations

import os
from types import ModuleType

from . import _conv_py

try:
    from . import _conv_ext  # type: ignore[attr-defined]
except ImportError:  # extension not built
    _conv_ext = None

AVAILABLE: dict[str, ModuleType] = {"python": _conv_py}
if _conv_ext is not None:
    AVAILABLE["cython"] = _conv_ext

_requested = os.environ.get("ROADCOTRAIN_BACKEND", "").strip().lower()
if _requested and _requested not in AVAILABLE:
    raise ImportError(f"ROADCOTRAIN_BACKEND={_requested!r} is not available; have {sorted(AVAILABLE)}")

_active = _requested or ("cython" if "cython" in AVAILABLE else "python")
kernels: ModuleType = AVAILABLE[_active]


def name() -> str:
    return _active


def use(backend: str) -> None:
    """Switch the conv kernels for the rest of the process."""
    global _active, kernels
    if backend not in AVAILABLE:
        raise ValueError(f"unknown backend {backend!r}; have {sorted(AVAILABLE)}")
    _active = backend
    kernels = AVAILABLE[backend]
