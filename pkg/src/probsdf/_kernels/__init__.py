"""Kernel backend selection.

The hot per-voxel / per-pixel / per-cell loops exist twice: a Cython
extension (``_core``) and a vectorized numpy fallback (``py_kernels``) with
identical signatures and semantics. The compiled core is preferred when it
imported successfully; set PROBSDF_BACKEND=python or =compiled to force one.
``probsdf.backend_bench`` compares the two.
"""

import os

__all__ = ["impl", "BACKEND", "get_impl", "available_backends"]

_requested = os.environ.get("PROBSDF_BACKEND", "auto")
if _requested not in ("auto", "compiled", "python"):
    raise RuntimeError(f"PROBSDF_BACKEND must be 'compiled' or 'python', "
                       f"got {_requested!r}")

impl = None
BACKEND = None
if _requested in ("auto", "compiled"):
    try:
        from . import _core as impl  # type: ignore[no-redef]
        BACKEND = "compiled"
    except ImportError:
        if _requested == "compiled":
            raise
if BACKEND is None:
    from . import py_kernels as impl  # type: ignore[no-redef]
    BACKEND = "python"


def get_impl(name: str):
    """Load a specific backend module ('python' or 'compiled')."""
    if name == "python":
        from . import py_kernels
        return py_kernels
    if name == "compiled":
        from . import _core
        return _core
    raise ValueError(f"unknown backend {name!r}")


def available_backends():
    out = ["python"]
    try:
        from . import _core  # noqa: F401
        out.insert(0, "compiled")
    except ImportError:
        pass
    return out
