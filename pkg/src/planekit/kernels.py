"""Backend dispatch for the hot per-pixel kernels.

The environment variable PLANEKIT_BACKEND selects the implementation:
"numba" (the default whenever numba imports) or "numpy". PLANEKIT_THREADS
caps the numba worker count; 0 or unset means automatic. The two backends
return bit-identical arrays, so the flag only affects speed.
"""

import os

import numpy as np

from . import _kernels_numpy
from .errors import InvalidInputError

_numba_kernels = None
_numba_import_failed = False


def backend_name() -> str:
    """Resolve the active backend from the environment."""
    requested = os.environ.get("PLANEKIT_BACKEND", "").strip().lower()
    if requested and requested not in ("numba", "numpy"):
        raise InvalidInputError(f"unknown PLANEKIT_BACKEND: {requested!r}")
    if requested == "numpy":
        return "numpy"
    if _load_numba() is None:
        if requested == "numba":
            raise InvalidInputError("PLANEKIT_BACKEND=numba but numba is not importable")
        return "numpy"
    return "numba"


def _load_numba():
    global _numba_kernels, _numba_import_failed
    if _numba_kernels is None and not _numba_import_failed:
        try:
            from . import _kernels_numba
            _numba_kernels = _kernels_numba
        except ImportError:
            _numba_import_failed = True
    return _numba_kernels


def _apply_thread_cap():
    raw = os.environ.get("PLANEKIT_THREADS", "").strip()
    if not raw:
        return
    try:
        n = int(raw)
    except ValueError:
        raise InvalidInputError(f"PLANEKIT_THREADS must be an integer, got {raw!r}")
    if n < 0:
        raise InvalidInputError("PLANEKIT_THREADS must be >= 0")
    if n == 0:
        return
    import numba
    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def _module():
    if backend_name() == "numba":
        _apply_thread_cap()
        return _load_numba()
    return _kernels_numpy


def raycast(xhat, yhat, rot_cw, origin, normals, offsets, corner0, edge1, edge2):
    """Nearest positive ray hit per pixel over a set of 3D rectangles.

    Rectangles are parallelograms (corner0, corner0+edge1, corner0+edge1+edge2,
    corner0+edge2). Returns (depth, hit_index); depth is the camera-space z of
    the hit and hit_index is -1 where no rectangle is hit.
    """
    numers = offsets - normals @ origin
    inv_e1 = 1.0 / np.einsum("ij,ij->i", edge1, edge1)
    inv_e2 = 1.0 / np.einsum("ij,ij->i", edge2, edge2)
    return _module().raycast(
        np.ascontiguousarray(xhat), np.ascontiguousarray(yhat),
        np.ascontiguousarray(rot_cw), np.ascontiguousarray(origin),
        np.ascontiguousarray(normals), np.ascontiguousarray(numers),
        np.ascontiguousarray(corner0), np.ascontiguousarray(edge1),
        np.ascontiguousarray(edge2), inv_e1, inv_e2)


def bilinear_gather(src, us, vs, valid):
    """Bilinear samples of src (H, W[, C]) at coords (us, vs) where valid."""
    squeeze = src.ndim == 2
    if squeeze:
        src = src[..., None]
    out, weight = _module().bilinear_gather(
        np.ascontiguousarray(src, dtype=np.float64),
        np.ascontiguousarray(us, dtype=np.float64),
        np.ascontiguousarray(vs, dtype=np.float64),
        np.ascontiguousarray(valid))
    if squeeze:
        out = out[..., 0]
    return out, weight
