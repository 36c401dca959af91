"""Numeric kernels with a numba fast path and a pure-numpy fallback.

Set ``USEJUDGE_DISABLE_NUMBA=1`` to force the numpy path. The numba path is also
skipped when numba is not installed.
"""

from __future__ import annotations

import os
from types import ModuleType

from . import _numpy_impl

ENV_FLAG = "USEJUDGE_DISABLE_NUMBA"


def _load_numba() -> ModuleType | None:
    try:
        from . import _numba_impl as mod
    except ImportError:
        return None
    return mod


def numba_available() -> bool:
    return _load_numba() is not None


def get(name: str | None = None) -> ModuleType:
    """Return the kernel module named ``"numba"`` or ``"numpy"``; default honours the env flag."""
    if name is None:
        disabled = os.environ.get(ENV_FLAG, "").strip().lower() not in ("", "0", "false", "no")
        name = "numpy" if disabled else "numba"
    if name == "numpy":
        return _numpy_impl
    if name == "numba":
        mod = _load_numba()
        return mod if mod is not None else _numpy_impl
    raise ValueError(f"unknown kernel backend {name!r}")


active = get()
