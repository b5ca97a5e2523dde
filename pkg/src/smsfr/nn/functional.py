"""Forward and backward kernels on batched channels-last arrays (N, H, W, C).

Valid padding and stride 1 for convolutions; pooling windows do not overlap
and trailing rows/columns that do not fill a window are dropped.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided

from ..errors import ShapeError


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x[None], True
    if x.ndim != 4:
        raise ShapeError(f"expected (N, H, W, C) or (H, W, C) input, got shape {x.shape}")
    return x, False


def im2col(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """(N, H, W, C) -> (N*Ho*Wo, kh*kw*C), patch entries ordered (kh, kw, C)."""
    x = np.ascontiguousarray(x)
    n, h, w, c = x.shape
    ho, wo = h - kh + 1, w - kw + 1
    s = x.strides
    # for a fixed kernel row the (kw, C) patch slice is contiguous in x
    view = as_strided(x, (n, ho, wo, kh, kw * c), (s[0], s[1], s[2], s[1], s[3]), writeable=False)
    return view.reshape(n * ho * wo, kh * kw * c)


def conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """x: (N, H, W, Cin) or (H, W, Cin); w: (kh, kw, Cin, Cout); b: (Cout,)."""
    x, squeeze = _as_batch(x)
    n, h, wd, cin = x.shape
    kh, kw, wcin, cout = w.shape
    if wcin != cin:
        raise ShapeError(f"conv2d: input has {cin} channels, kernel expects {wcin}")
    if h < kh or wd < kw:
        raise ShapeError(f"conv2d: input {h}x{wd} smaller than kernel {kh}x{kw}")
    out = im2col(x, kh, kw) @ w.reshape(-1, cout)
    if b is not None:
        out += b
    out = out.reshape(n, h - kh + 1, wd - kw + 1, cout)
    return out[0] if squeeze else out


def conv2d_backward(dout: np.ndarray, x: np.ndarray, w: np.ndarray, cols: np.ndarray | None = None,
                    need_dx: bool = True) -> tuple[np.ndarray | None, np.ndarray, np.ndarray]:
    """Returns (dx, dw, db) for conv2d on a batched input."""
    n, h, wd, cin = x.shape
    kh, kw, _, cout = w.shape
    ho, wo = h - kh + 1, wd - kw + 1
    d2 = dout.reshape(-1, cout)
    if cols is None:
        cols = im2col(x, kh, kw)
    dw = (cols.T @ d2).reshape(w.shape)
    db = d2.sum(axis=0)
    if not need_dx:
        return None, dw, db
    dx = np.zeros(x.shape, dtype=np.result_type(dout, w))
    for i in range(kh):
        for j in range(kw):
            dx[:, i : i + ho, j : j + wo, :] += (d2 @ w[i, j].T).reshape(n, ho, wo, cin)
    return dx, dw, db


def leaky_relu(x: np.ndarray, slope: float = 0.01) -> np.ndarray:
    return np.where(x > 0, x, slope * x)


def leaky_relu_backward(dout: np.ndarray, x: np.ndarray, slope: float = 0.01) -> np.ndarray:
    return np.where(x > 0, dout, slope * dout)


def _pool_view(x: np.ndarray, ph: int, pw: int) -> np.ndarray:
    n, h, w, c = x.shape
    ho, wo = h // ph, w // pw
    if ho == 0 or wo == 0:
        raise ShapeError(f"max_pool: window {ph}x{pw} larger than input {h}x{w}")
    v = x[:, : ho * ph, : wo * pw, :].reshape(n, ho, ph, wo, pw, c)
    return v.transpose(0, 1, 3, 5, 2, 4).reshape(n, ho, wo, c, ph * pw)


def max_pool(x: np.ndarray, ph: int = 2, pw: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Returns (pooled, argmax index within each window, row-major, first on ties)."""
    x, squeeze = _as_batch(x)
    if (ph, pw) == (2, 1):
        ho = x.shape[1] // 2
        if ho == 0:
            raise ShapeError(f"max_pool: window 2x1 larger than input {x.shape[1]}x{x.shape[2]}")
        top, bottom = x[:, 0 : 2 * ho : 2], x[:, 1 : 2 * ho : 2]
        second = bottom > top
        out = np.where(second, bottom, top)
        idx = second.astype(np.int8)
    else:
        v = _pool_view(x, ph, pw)
        idx = v.argmax(axis=-1)
        out = np.take_along_axis(v, idx[..., None], axis=-1)[..., 0]
    if squeeze:
        return out[0], idx[0]
    return out, idx


def max_pool_backward(dout: np.ndarray, idx: np.ndarray, in_shape: tuple, ph: int = 2, pw: int = 1) -> np.ndarray:
    n, h, w, c = in_shape
    ho, wo = h // ph, w // pw
    if (ph, pw) == (2, 1):
        dx = np.zeros(in_shape, dtype=dout.dtype)
        second = idx.astype(bool)
        dx[:, 0 : 2 * ho : 2] = np.where(second, 0, dout)
        dx[:, 1 : 2 * ho : 2] = np.where(second, dout, 0)
        return dx
    dv = np.zeros((n, ho, wo, c, ph * pw), dtype=dout.dtype)
    np.put_along_axis(dv, idx[..., None], dout[..., None], axis=-1)
    dv = dv.reshape(n, ho, wo, c, ph, pw).transpose(0, 1, 4, 2, 5, 3).reshape(n, ho * ph, wo * pw, c)
    dx = np.zeros(in_shape, dtype=dout.dtype)
    dx[:, : ho * ph, : wo * pw, :] = dv
    return dx


def linear(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """x: (N, D) or (D,); w: (D, out)."""
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear: input width {x.shape[-1]} != weight rows {w.shape[0]}")
    out = x @ w
    if b is not None:
        out = out + b
    return out


def linear_backward(dout: np.ndarray, x: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return dout @ w.T, x.T @ dout, dout.sum(axis=0)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
