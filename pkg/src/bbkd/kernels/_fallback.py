"""Numpy implementations of the convolution kernels.

Used when the compiled extension is unavailable (or disabled via the
``BBKD_PURE_PYTHON`` environment variable).  Same contracts as
``bbkd.kernels._core``: float64, stride 1, odd kernels, zero same-padding.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _im2col(xp: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """[C, H + kh - 1, W + kw - 1] padded image -> [C*kh*kw, H*W] patch matrix."""
    c = xp.shape[0]
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))  # [C, H, W, kh, kw]
    h, w = win.shape[1], win.shape[2]
    return win.transpose(0, 3, 4, 1, 2).reshape(c * kh * kw, h * w)


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    c_out, c_in, kh, kw = w.shape
    h, wd = x.shape[1], x.shape[2]
    xp = np.pad(x, ((0, 0), (kh // 2, kh // 2), (kw // 2, kw // 2)))
    col = _im2col(xp, kh, kw)
    y = (w.reshape(c_out, -1) @ col).reshape(c_out, h, wd)
    y += b[:, None, None]
    return y


def conv2d_grad_kernels(x: np.ndarray, gy: np.ndarray, kh: int, kw: int) -> np.ndarray:
    c_out = gy.shape[0]
    c_in = x.shape[0]
    xp = np.pad(x, ((0, 0), (kh // 2, kh // 2), (kw // 2, kw // 2)))
    col = _im2col(xp, kh, kw)
    gw = gy.reshape(c_out, -1) @ col.T
    return gw.reshape(c_out, c_in, kh, kw)


def conv2d_grad_input(w: np.ndarray, gy: np.ndarray) -> np.ndarray:
    # Same-padding stride-1 correlation: the input gradient is the correlation
    # of the output gradient with the spatially flipped, channel-transposed
    # kernels, again with same padding.
    c_out, c_in, kh, kw = w.shape
    h, wd = gy.shape[1], gy.shape[2]
    wf = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    gyp = np.pad(gy, ((0, 0), (kh // 2, kh // 2), (kw // 2, kw // 2)))
    col = _im2col(gyp, kh, kw)
    gx = wf.reshape(c_in, -1) @ col
    return gx.reshape(c_in, h, wd)
