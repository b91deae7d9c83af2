"""Pure NumPy sampling primitives for the deformable convolution.

These are the fallback implementations used when the compiled extension
(dfpn._kernels_c) is unavailable or disabled via DFPN_BACKEND=python.
Both backends expose the same three primitives:

  sample_tap      gather one kernel tap's bilinear samples into a dense map
  scatter_tap     scatter a tap's upstream gradient back onto the input
  offset_grad_tap reduce a tap's upstream gradient to (dy, dx) offset grads

Conventions shared by both backends:
  * offsets have shape (n, 2*kh*kw, h, w); channels (2j, 2j+1) hold the
    (dy, dx) displacement of kernel tap j, taps numbered row-major over
    the kernel grid.
  * tap j samples input at (y + ry_j + dy, x + rx_j + dx) where
    (ry_j, rx_j) = (j // kw - kh // 2, j % kw - kw // 2).
  * bilinear neighbours outside [0,h)x[0,w) contribute zero; at integer
    coordinates the cell [floor(v), floor(v)+1] is differentiated
    (right/down-continuous choice).
"""

import numpy as np

NAME = "python"


def _tap_coords(offsets, kh, kw, j, h, w):
    """Sampling coordinates of tap j: floor parts, fractions, per-corner masks."""
    ry = j // kw - kh // 2
    rx = j % kw - kw // 2
    sy = np.arange(h, dtype=np.float64)[None, :, None] + ry + offsets[:, 2 * j].astype(np.float64)
    sx = np.arange(w, dtype=np.float64)[None, None, :] + rx + offsets[:, 2 * j + 1].astype(np.float64)
    y0 = np.floor(sy).astype(np.int64)
    x0 = np.floor(sx).astype(np.int64)
    fy = sy - y0
    fx = sx - x0
    return y0, x0, fy, fx


def _corners(fy, fx):
    """(dy, dx, weight) for the four bilinear corners of a cell."""
    return (
        (0, 0, (1.0 - fy) * (1.0 - fx)),
        (0, 1, (1.0 - fy) * fx),
        (1, 0, fy * (1.0 - fx)),
        (1, 1, fy * fx),
    )


def _gather(x, yi, xi):
    """Per-pixel gather x[n, :, yi, xi] with zero fill outside the frame."""
    n, c, h, w = x.shape
    valid = (yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)
    flat = np.where(valid, yi * w + xi, 0)
    v = x.reshape(n, c, h * w)[np.arange(n)[:, None, None], :, flat]
    v = np.moveaxis(v, -1, 1)  # (n, c, h, w)
    return v * valid[:, None], valid


def sample_tap(x, offsets, kh, kw, j, threads=1):
    n, c, h, w = x.shape
    y0, x0, fy, fx = _tap_coords(offsets, kh, kw, j, h, w)
    out = np.zeros((n, c, h, w), dtype=np.float64)
    for dy, dx, wgt in _corners(fy, fx):
        v, _ = _gather(x, y0 + dy, x0 + dx)
        out += wgt[:, None] * v
    return np.ascontiguousarray(out.astype(x.dtype))


def scatter_tap(d_x, d_col, offsets, kh, kw, j, threads=1):
    n, c, h, w = d_x.shape
    y0, x0, fy, fx = _tap_coords(offsets, kh, kw, j, h, w)
    cidx = (np.arange(n)[:, None, None, None] * c + np.arange(c)[None, :, None, None]) * (h * w)
    acc = np.zeros(n * c * h * w, dtype=np.float64)
    for dy, dx, wgt in _corners(fy, fx):
        yi = y0 + dy
        xi = x0 + dx
        valid = (yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)
        flat = np.where(valid, yi * w + xi, 0)
        vals = d_col * (wgt * valid)[:, None]
        acc += np.bincount((cidx + flat[:, None]).ravel(), weights=vals.ravel(), minlength=acc.size)
    d_x += acc.reshape(d_x.shape).astype(d_x.dtype)


def offset_grad_tap(x, offsets, kh, kw, j, d_col, threads=1):
    n, c, h, w = x.shape
    y0, x0, fy, fx = _tap_coords(offsets, kh, kw, j, h, w)
    v00, _ = _gather(x, y0, x0)
    v01, _ = _gather(x, y0, x0 + 1)
    v10, _ = _gather(x, y0 + 1, x0)
    v11, _ = _gather(x, y0 + 1, x0 + 1)
    d_dy = -(1.0 - fx[:, None]) * v00 - fx[:, None] * v01 + (1.0 - fx[:, None]) * v10 + fx[:, None] * v11
    d_dx = -(1.0 - fy[:, None]) * v00 + (1.0 - fy[:, None]) * v01 - fy[:, None] * v10 + fy[:, None] * v11
    dsy = (d_col * d_dy).sum(axis=1)
    dsx = (d_col * d_dx).sum(axis=1)
    return dsy.astype(x.dtype), dsx.astype(x.dtype)
