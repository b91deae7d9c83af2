"""Backend selection for the sampling primitives.

The compiled extension is preferred when it imported cleanly; the pure
NumPy fallback is always available. Selection happens once at import and
can be forced with DFPN_BACKEND=compiled|python. DFPN_THREADS caps the
worker threads of the compiled loops (0 or unset = all cores).
"""

import os

from dfpn import _kernels_py

try:
    from dfpn import _kernels_c
except ImportError:
    _kernels_c = None

_FORCED = os.environ.get("DFPN_BACKEND", "auto").lower()
if _FORCED not in ("auto", "compiled", "python"):
    raise RuntimeError(f"DFPN_BACKEND must be auto, compiled or python, got {_FORCED!r}")
if _FORCED == "compiled" and _kernels_c is None:
    raise RuntimeError("DFPN_BACKEND=compiled but the dfpn._kernels_c extension is not built")

if _FORCED == "python" or _kernels_c is None:
    _active = _kernels_py
else:
    _active = _kernels_c

BACKEND = _active.NAME
HAVE_COMPILED = _kernels_c is not None


def primitives(name=None):
    """Active primitive set, or a specific one by name ('compiled'/'python')."""
    if name is None:
        return _active
    if name == "python":
        return _kernels_py
    if name == "compiled":
        if _kernels_c is None:
            raise RuntimeError("compiled backend requested but not built")
        return _kernels_c
    raise ValueError(f"unknown backend {name!r}")


def resolve_threads(threads=None):
    """Positive worker count from the argument, DFPN_THREADS, or cpu count."""
    if threads is None:
        threads = int(os.environ.get("DFPN_THREADS", "0"))
    if threads <= 0:
        threads = os.cpu_count() or 1
    return threads
