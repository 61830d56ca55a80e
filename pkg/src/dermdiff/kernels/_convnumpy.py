"""Pure-numpy conv2d kernels (fallback backend).

Implements the same forward / gradient contracts as the compiled extension,
using sliding-window views plus BLAS tensordot.  Used when the extension is
not built or when ``DERMDIFF_KERNELS=numpy`` is set.
"""

import numpy as np


def _window_view(xp: np.ndarray, k: int, stride: int) -> np.ndarray:
    n, c, hp, wp = xp.shape
    oh = (hp - k) // stride + 1
    ow = (wp - k) // stride + 1
    sn, sc, sh, sw = xp.strides
    return np.lib.stride_tricks.as_strided(
        xp,
        shape=(n, c, oh, ow, k, k),
        strides=(sn, sc, sh * stride, sw * stride, sh, sw),
        writeable=False,
    )


def _pad(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def conv2d_fwd(x: np.ndarray, w: np.ndarray, stride: int, pad: int) -> np.ndarray:
    """Cross-correlate x[N,C,H,W] with w[F,C,k,k]; zero padding."""
    k = w.shape[2]
    win = _window_view(_pad(x, pad), k, stride)
    y = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))  # N,OH,OW,F
    return np.ascontiguousarray(y.transpose(0, 3, 1, 2))


def conv2d_bwd_w(x: np.ndarray, gy: np.ndarray, k: int, stride: int, pad: int) -> np.ndarray:
    """Gradient w.r.t. the kernel: gy[N,F,OH,OW] against input windows."""
    win = _window_view(_pad(x, pad), k, stride)
    return np.ascontiguousarray(np.tensordot(gy, win, axes=([0, 2, 3], [0, 2, 3])))


def conv2d_bwd_x(w: np.ndarray, gy: np.ndarray, h: int, wdt: int, stride: int, pad: int) -> np.ndarray:
    """Gradient w.r.t. the input, scattered back through each kernel tap."""
    k = w.shape[2]
    n, _, oh, ow = gy.shape
    c = w.shape[1]
    gxp = np.zeros((n, c, h + 2 * pad, wdt + 2 * pad), dtype=gy.dtype)
    # One [N*OH*OW, F] x [F, C*k*k] product, then 9 (k*k) strided adds.
    t = np.tensordot(gy, w, axes=([1], [0]))  # N,OH,OW,C,k,k
    for i in range(k):
        for j in range(k):
            gxp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += t[
                :, :, :, :, i, j
            ].transpose(0, 3, 1, 2)
    if pad == 0:
        return gxp
    return np.ascontiguousarray(gxp[:, :, pad : pad + h, pad : pad + wdt])
