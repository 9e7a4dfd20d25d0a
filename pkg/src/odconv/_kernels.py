"""Hot inner kernels: im2col gather and col2im scatter-add.

Two interchangeable implementations live here: vectorized numpy versions
and numba-compiled twins. Both produce bitwise-identical outputs: the
gather is pure indexing, and the scatter-add accumulates contributions in
the same (ky, kx)-major order in both paths. Selection happens in
`backend`; nothing here reads environment state.

Column layout: im2col(xp) -> [b, ho*wo, c*k*k] with the last axis ordered
(channel, ky, kx) so that channel-group g occupies the contiguous slice
[g*cpf*k*k : (g+1)*cpf*k*k].
"""

from __future__ import annotations

import numpy as np


def im2col_numpy(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Gather sliding k-by-k windows of a padded [b,c,hp,wp] input."""
    b, c, _, _ = xp.shape
    s0, s1, s2, s3 = xp.strides
    windows = np.lib.stride_tricks.as_strided(
        xp,
        shape=(b, c, ho, wo, k, k),
        strides=(s0, s1, s2 * stride, s3 * stride, s2, s3),
        writeable=False,
    )
    # reshape after transpose copies out of the strided view
    return windows.transpose(0, 2, 3, 1, 4, 5).reshape(b, ho * wo, c * k * k)


def col2im_numpy(dcols: np.ndarray, b: int, c: int, hp: int, wp: int,
                 k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Scatter-add column gradients back onto the padded input shape."""
    dxp = np.zeros((b, c, hp, wp), dtype=dcols.dtype)
    d6 = dcols.reshape(b, ho, wo, c, k, k)
    for ky in range(k):
        for kx in range(k):
            # one kernel tap hits a disjoint stride-grid, so += is safe
            dxp[:, :, ky:ky + stride * ho:stride, kx:kx + stride * wo:stride] += (
                d6[:, :, :, :, ky, kx].transpose(0, 3, 1, 2)
            )
    return dxp


def _im2col_loops(xp, k, stride, ho, wo):
    b, c, _, _ = xp.shape
    cols = np.empty((b, ho * wo, c * k * k), dtype=xp.dtype)
    for bi in range(b):
        for oy in range(ho):
            for ox in range(wo):
                l = oy * wo + ox
                q = 0
                for ci in range(c):
                    for ky in range(k):
                        for kx in range(k):
                            cols[bi, l, q] = xp[bi, ci, oy * stride + ky, ox * stride + kx]
                            q += 1
    return cols


def _col2im_loops(dcols, b, c, hp, wp, k, stride, ho, wo):
    dxp = np.zeros((b, c, hp, wp), dtype=dcols.dtype)
    kk = k * k
    # (ky, kx)-major accumulation matches col2im_numpy bit for bit
    for bi in range(b):
        for ky in range(k):
            for kx in range(k):
                for ci in range(c):
                    base = ci * kk + ky * k + kx
                    for oy in range(ho):
                        for ox in range(wo):
                            dxp[bi, ci, oy * stride + ky, ox * stride + kx] += (
                                dcols[bi, oy * wo + ox, base]
                            )
    return dxp


_numba_cache: dict | None = None


def build_numba_kernels() -> dict:
    """Compile the loop twins with numba; cached per process and on disk."""
    global _numba_cache
    if _numba_cache is None:
        from numba import njit

        _numba_cache = {
            "im2col": njit(cache=True)(_im2col_loops),
            "col2im": njit(cache=True)(_col2im_loops),
        }
    return _numba_cache


NUMPY_KERNELS = {"im2col": im2col_numpy, "col2im": col2im_numpy}
