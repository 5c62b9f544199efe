"""Backend switch between numba-compiled kernels and numpy fallbacks.

Set ``CONESHEET_NUMBA=0`` to force the pure-numpy code paths.  When numba is
not installed the numpy paths are used regardless of the flag.
"""

from __future__ import annotations

import os
from contextlib import contextmanager

ENV_FLAG = "CONESHEET_NUMBA"

try:
    import numba as _numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    _numba = None
    HAVE_NUMBA = False

_override: bool | None = None


def _flag_enabled() -> bool:
    raw = os.environ.get(ENV_FLAG, "1").strip().lower()
    return raw not in {"0", "false", "no", "off"}


def use_numba() -> bool:
    """True when the compiled kernels should be used for the next call."""
    if not HAVE_NUMBA:
        return False
    if _override is not None:
        return _override
    return _flag_enabled()


def backend_name() -> str:
    return "numba" if use_numba() else "numpy"


@contextmanager
def forced_backend(name: str):
    """Temporarily select ``"numba"`` or ``"numpy"`` (used by benchmarks and tests)."""
    global _override
    if name not in {"numba", "numpy"}:
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    previous = _override
    _override = name == "numba"
    try:
        yield
    finally:
        _override = previous


def njit(func):
    """``numba.njit(cache=True)`` when numba is available, identity otherwise."""
    if HAVE_NUMBA:
        return _numba.njit(cache=True)(func)
    return func
