"""Kernel backend selection.

The compiled extension is used when it imports; setting
``NCSPHERE_PURE_PYTHON=1`` forces the numpy fallback.
"""
import os

from . import _fallback

COMPILED = False
kernels = _fallback

if not os.environ.get("NCSPHERE_PURE_PYTHON"):
    try:
        from . import _kernels as kernels  # type: ignore[no-redef]

        COMPILED = True
    except ImportError:
        kernels = _fallback

NAME = "cython" if COMPILED else "numpy"


def get(name=None):
    """Return a kernel module by name ("cython" or "numpy"), defaulting to the active one."""
    if name is None:
        return kernels
    if name == "numpy":
        return _fallback
    if name == "cython":
        from . import _kernels

        return _kernels
    raise ValueError(f"unknown backend {name!r}")
