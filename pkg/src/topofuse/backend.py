"""Kernel backend selection.

The numba backend is the default; set TOPOFUSE_BACKEND=numpy to force the
pure-numpy fallback (or =numba to fail loudly when numba is missing). The
flag is read when an operator is built, so tests and benchmarks can switch
per construction; operators also accept an explicit backend name.
"""

from __future__ import annotations

import os

from . import _kernels_numpy

ENV_VAR = "TOPOFUSE_BACKEND"

try:
    from . import _kernels_numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    _kernels_numba = None
    HAS_NUMBA = False

_BACKENDS = {"numpy": _kernels_numpy}
if HAS_NUMBA:
    _BACKENDS["numba"] = _kernels_numba


def default_backend_name() -> str:
    return "numba" if HAS_NUMBA else "numpy"


def available_backends() -> tuple[str, ...]:
    return tuple(sorted(_BACKENDS))


def get_backend(name: str | None = None):
    """Resolve a kernel module by explicit name, env flag, or default."""
    if name is None:
        name = os.environ.get(ENV_VAR, "").strip().lower() or default_backend_name()
    if name not in ("numpy", "numba"):
        raise ValueError(f"unknown backend {name!r}, expected numba|numpy")
    if name == "numba" and not HAS_NUMBA:
        raise RuntimeError("numba backend requested but numba is not importable")
    return _BACKENDS[name]
