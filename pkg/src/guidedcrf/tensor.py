"""Dense H x W x C float64 buffers, integral-image box filtering and bilinear resampling.

A "tensor" throughout the package is a C-contiguous ``numpy.ndarray`` of shape
``(height, width, channels)`` and dtype float64.  Two-dimensional inputs are
promoted to a single channel.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "as_tensor",
    "box_filter",
    "box_sum_1d",
    "window_counts",
    "bilinear_resize",
    "elementwise",
]


def as_tensor(x, *, check_finite: bool = True) -> np.ndarray:
    """Validate ``x`` and return it as an ``(H, W, C)`` float64 array."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ValueError(f"expected an (H, W, C) array, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError("empty tensor")
    if check_finite and not np.isfinite(arr).all():
        raise ValueError("tensor contains non-finite values")
    return np.ascontiguousarray(arr)


def box_sum_1d(x: np.ndarray, radius: int, axis: int, extend: bool = False) -> np.ndarray:
    """Sums over a ``2*radius + 1`` window along one axis via a prefix sum.

    With ``extend=False`` the output has the input's length and windows are
    clipped at both ends.  With ``extend=True`` the output grows by
    ``2*radius`` and entry ``t`` holds the clipped window centred at input
    position ``t - radius``, i.e. window centres also range over a margin of
    ``radius`` positions outside the data.
    """
    n = x.shape[axis]
    csum = _prefix_sum(x, axis)
    centres = np.arange(-radius, n + radius) if extend else np.arange(n)
    hi = np.clip(centres + radius + 1, 0, n)
    lo = np.clip(centres - radius, 0, n)
    return np.take(csum, hi, axis=axis) - np.take(csum, lo, axis=axis)


def _prefix_sum(x: np.ndarray, axis: int) -> np.ndarray:
    """Inclusive prefix sum with a leading zero slice along ``axis``."""
    shape = list(x.shape)
    shape[axis] += 1
    out = np.zeros(shape)
    if axis == 0:
        # row-wise accumulation is much faster than np.cumsum along the outer axis
        for t in range(x.shape[0]):
            np.add(out[t], x[t], out=out[t + 1])
    else:
        idx = [slice(None)] * x.ndim
        idx[axis] = slice(1, None)
        np.cumsum(x, axis=axis, out=out[tuple(idx)])
    return out


def window_counts(n: int, radius: int, extend: bool = False) -> np.ndarray:
    """Number of in-range positions in each clipped 1-D window (see :func:`box_sum_1d`)."""
    if extend:
        centres = np.arange(-radius, n + radius)
    else:
        centres = np.arange(n)
    lo = np.maximum(centres - radius, 0)
    hi = np.minimum(centres + radius, n - 1)
    return (hi - lo + 1).astype(np.float64)


def _box_sum(x: np.ndarray, radius: int, extend: bool = False) -> np.ndarray:
    # separable: the row pass keeps magnitudes small before the column pass
    return box_sum_1d(box_sum_1d(x, radius, 0, extend), radius, 1, extend)


def box_filter(src, radius: int) -> np.ndarray:
    """Mean over the clipped ``(2r+1)^2`` window around every pixel, per channel.

    Cost is independent of ``radius``: each output is two prefix-sum differences.

    >>> box_filter(np.array([[0.0, 3.0, 6.0]]), 1)[..., 0]
    array([[1.5, 3. , 4.5]])
    """
    src = as_tensor(src)
    if radius < 1:
        raise ValueError("radius must be >= 1")
    h, w, _ = src.shape
    counts = np.outer(window_counts(h, radius), window_counts(w, radius))
    return _box_sum(src, radius) / counts[:, :, None]


def _source_coords(n_in: int, n_out: int):
    # half-pixel centres: x_src = (x_dst + 0.5) * n_in / n_out - 0.5
    x = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    x = np.clip(x, 0.0, n_in - 1)
    i0 = np.floor(x).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, x - i0


def bilinear_resize(src, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resampling with half-pixel centre alignment.

    Interpolation is written as ``a + t*(b - a)`` so constant regions are
    reproduced exactly.  Same-size resizing returns an unchanged copy.
    """
    src = as_tensor(src)
    if out_h < 1 or out_w < 1:
        raise ValueError("output size must be at least 1x1")
    h, w, _ = src.shape
    if (out_h, out_w) == (h, w):
        return src.copy()
    rows = _lerp_axis(src, out_h, 0) if out_h != h else src
    return _lerp_axis(rows, out_w, 1) if out_w != w else rows


def _lerp_axis(x: np.ndarray, n_out: int, axis: int) -> np.ndarray:
    i0, i1, t = _source_coords(x.shape[axis], n_out)
    a = np.take(x, i0, axis=axis)
    b = np.take(x, i1, axis=axis)
    shape = [1] * x.ndim
    shape[axis] = n_out
    b -= a
    b *= t.reshape(shape)
    a += b
    return a


_OPS = {"add": np.add, "sub": np.subtract, "mul": np.multiply}


def elementwise(a, b, op: str) -> np.ndarray:
    """Pointwise ``add``, ``sub`` or ``mul`` of two same-shaped tensors."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    try:
        fn = _OPS[op]
    except KeyError:
        raise ValueError(f"unknown op {op!r}; expected one of {sorted(_OPS)}") from None
    return fn(a, b)
