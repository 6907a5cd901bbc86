"""Scan kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy
fallback. Set ``COLORMAMBA_PURE_PYTHON=1`` to force the fallback and
``COLORMAMBA_THREADS`` to cap the worker count of the compiled kernels.
"""

import os

from . import _scan_py

try:
    if os.environ.get("COLORMAMBA_PURE_PYTHON"):
        raise ImportError("pure-Python kernels requested")
    from . import _scan_ext
except ImportError:
    _scan_ext = None

BACKENDS = {"python": _scan_py}
if _scan_ext is not None:
    BACKENDS["compiled"] = _scan_ext

BACKEND = "compiled" if _scan_ext is not None else "python"
_active = BACKENDS[BACKEND]


def thread_count() -> int:
    raw = os.environ.get("COLORMAMBA_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    return max(1, os.cpu_count() or 1)


def get_backend(name: str | None = None):
    if name is None:
        return _active
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} is not available; have {sorted(BACKENDS)}") from None


def use_backend(name: str) -> None:
    global _active, BACKEND
    _active = get_backend(name)
    BACKEND = name


def linear_recurrence(a, u, backend=None):
    return get_backend(backend).linear_recurrence(a, u, nthreads=thread_count())


def selective_scan_fwd(u, delta, A, B, C, D, backend=None):
    return get_backend(backend).selective_scan_fwd(u, delta, A, B, C, D, nthreads=thread_count())


def selective_scan_bwd(u, delta, A, B, C, D, hs, gy, backend=None):
    return get_backend(backend).selective_scan_bwd(u, delta, A, B, C, D, hs, gy, nthreads=thread_count())
