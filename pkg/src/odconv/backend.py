"""Backend selection for the hot kernels.

The environment variable ODCONV_BACKEND chooses the implementation at
import time: "numba" (compiled loops), "numpy" (vectorized fallback), or
"auto" (numba when importable, else numpy; the default). `set_backend`
switches at runtime. Forward results are bitwise-identical across
backends, so the choice is purely about speed.
"""

from __future__ import annotations

import os

import numpy as np

from . import _kernels
from .errors import ParameterError

_CHOICES = ("auto", "numba", "numpy")
_active: dict = {"name": None, "impl": None}


def _numba_importable() -> bool:
    try:
        import numba  # noqa: F401
    except Exception:
        return False
    return True


def set_backend(name: str) -> str:
    """Select 'auto', 'numba', or 'numpy'; returns the resolved name."""
    if name not in _CHOICES:
        raise ParameterError(f"unknown backend {name!r}; choose from {_CHOICES}")
    if name == "auto":
        name = "numba" if _numba_importable() else "numpy"
    if name == "numba":
        _active["impl"] = _kernels.build_numba_kernels()
    else:
        _active["impl"] = _kernels.NUMPY_KERNELS
    _active["name"] = name
    return name


def active_backend() -> str:
    """Name of the backend currently in use."""
    if _active["name"] is None:
        set_backend(os.environ.get("ODCONV_BACKEND", "auto"))
    return _active["name"]


def _impl() -> dict:
    if _active["impl"] is None:
        active_backend()
    return _active["impl"]


def im2col(x: np.ndarray, k: int, stride: int, padding: int):
    """Pad a [b,c,h,w] input and gather its windows.

    Returns (cols [b, ho*wo, c*k*k], (ho, wo)).
    """
    b, c, h, w = x.shape
    ho = (h + 2 * padding - k) // stride + 1
    wo = (w + 2 * padding - k) // stride + 1
    if padding > 0:
        xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = np.ascontiguousarray(x)
    return _impl()["im2col"](xp, k, stride, ho, wo), (ho, wo)


def col2im(dcols: np.ndarray, x_shape: tuple, k: int, stride: int, padding: int,
           ho: int, wo: int) -> np.ndarray:
    """Scatter column gradients back to the unpadded input shape."""
    b, c, h, w = x_shape
    hp, wp = h + 2 * padding, w + 2 * padding
    dxp = _impl()["col2im"](np.ascontiguousarray(dcols), b, c, hp, wp, k, stride, ho, wo)
    if padding > 0:
        return dxp[:, :, padding:padding + h, padding:padding + w].copy()
    return dxp


def warmup() -> str:
    """Run one tiny gather/scatter so compilation cost is paid up front."""
    x = np.arange(36, dtype=np.float64).reshape(1, 1, 6, 6)
    cols, (ho, wo) = im2col(x, 3, 1, 1)
    col2im(cols, x.shape, 3, 1, 1, ho, wo)
    return active_backend()
