"""Convolution kernels: plain cross-correlation and its deformable variant.

Both are evaluated as GEMMs over gathered tap columns laid out
(channel, tap, pixel). Plain convolution gathers integer-grid windows;
the deformable variant gathers bilinear samples through the backend
primitives (dfpn.backend), which is the only part that differs between
the compiled and pure-python backends. Because the two paths contract
identically laid-out columns with the same GEMM call, a deformable
convolution with integer offsets reproduces the shifted plain convolution
bit for bit wherever the gathered columns coincide.

Large images are processed in output-row chunks so the column scratch
stays at a bounded size; small images (anything under CHUNK_PIXELS) go
through a single chunk.
"""

import numpy as np

from dfpn import backend

CHUNK_PIXELS = 24_576


def _out_size(h, w, kh, kw, pad):
    oh = h + 2 * pad - kh + 1
    ow = w + 2 * pad - kw + 1
    if oh < 1 or ow < 1:
        raise ValueError(f"kernel {kh}x{kw} with pad {pad} does not fit input {h}x{w}")
    return oh, ow


def _padded(x, pad):
    if pad == 0:
        return x
    n, c, h, w = x.shape
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
    xp[:, :, pad : pad + h, pad : pad + w] = x
    return xp


def _row_chunks(oh, ow):
    rows = max(1, min(oh, CHUNK_PIXELS // max(1, ow)))
    return [(r, min(r + rows, oh)) for r in range(0, oh, rows)]


def _fill_conv_cols(cols, xp, kh, kw, r0, r1, ow):
    """Gather integer-grid tap windows for output rows [r0, r1)."""
    for j in range(kh * kw):
        ky, kx = divmod(j, kw)
        cols[:, :, j] = xp[:, :, ky + r0 : ky + r1, kx : kx + ow]


def conv2d_forward(x, weight, bias, pad, threads=None):
    n, c, h, w = x.shape
    co, ci, kh, kw = weight.shape
    oh, ow = _out_size(h, w, kh, kw, pad)
    xp = _padded(x, pad)
    w2 = weight.reshape(co, ci * kh * kw)
    out = np.empty((n, co, oh, ow), dtype=x.dtype)
    out3 = out.reshape(n, co, oh * ow)
    chunks = _row_chunks(oh, ow)
    rows_max = chunks[0][1] - chunks[0][0]
    cols = np.empty((n, ci, kh * kw, rows_max, ow), dtype=x.dtype)
    for r0, r1 in chunks:
        part = cols[:, :, :, : r1 - r0]
        _fill_conv_cols(part, xp, kh, kw, r0, r1, ow)
        for ni in range(n):
            np.matmul(w2, part[ni].reshape(ci * kh * kw, (r1 - r0) * ow), out=out3[ni, :, r0 * ow : r1 * ow])
    out += bias[None, :, None, None]
    return out


def conv2d_backward(x, weight, d_out, pad, threads=None):
    n, c, h, w = x.shape
    co, ci, kh, kw = weight.shape
    oh, ow = d_out.shape[2], d_out.shape[3]
    xp = _padded(x, pad)
    w2t = np.ascontiguousarray(weight.reshape(co, ci * kh * kw).T)
    d_out3 = d_out.reshape(n, co, oh * ow)
    d_b = d_out.sum(axis=(0, 2, 3))
    d_w2 = np.zeros((co, ci * kh * kw), dtype=x.dtype)
    d_xp = np.zeros_like(xp)
    chunks = _row_chunks(oh, ow)
    rows_max = chunks[0][1] - chunks[0][0]
    cols = np.empty((n, ci, kh * kw, rows_max, ow), dtype=x.dtype)
    d_cols = np.empty_like(cols)
    for r0, r1 in chunks:
        rows = r1 - r0
        part = cols[:, :, :, :rows]
        _fill_conv_cols(part, xp, kh, kw, r0, r1, ow)
        d_part = d_cols[:, :, :, :rows]
        d_part3 = d_part.reshape(n, ci * kh * kw, rows * ow)
        for ni in range(n):
            d_slice = d_out3[ni, :, r0 * ow : r1 * ow]
            d_w2 += np.matmul(d_slice, part[ni].reshape(ci * kh * kw, rows * ow).T)
            np.matmul(w2t, d_slice, out=d_part3[ni])
        for j in range(kh * kw):
            ky, kx = divmod(j, kw)
            d_xp[:, :, ky + r0 : ky + r1, kx : kx + ow] += d_part[:, :, j]
    d_x = d_xp[:, :, pad : pad + h, pad : pad + w]
    if pad > 0:
        d_x = np.ascontiguousarray(d_x)
    return d_x, d_w2.reshape(weight.shape), d_b


def _deform_cols(x, offsets, kh, kw, prims, nt):
    n, c, h, w = x.shape
    cols = np.empty((n, c, kh * kw, h, w), dtype=x.dtype)
    for j in range(kh * kw):
        cols[:, :, j] = prims.sample_tap(x, offsets, kh, kw, j, nt)
    return cols.reshape(n, c * kh * kw, h * w)


def deform_conv2d_forward(x, offsets, weight, bias, threads=None):
    prims = backend.primitives()
    nt = backend.resolve_threads(threads)
    n, c, h, w = x.shape
    co, ci, kh, kw = weight.shape
    w2 = weight.reshape(co, ci * kh * kw)
    cols = _deform_cols(x, offsets, kh, kw, prims, nt)
    out = np.empty((n, co, h * w), dtype=x.dtype)
    for ni in range(n):
        np.matmul(w2, cols[ni], out=out[ni])
    out = out.reshape(n, co, h, w)
    out += bias[None, :, None, None]
    return out


def deform_conv2d_backward(x, offsets, weight, d_out, threads=None):
    prims = backend.primitives()
    nt = backend.resolve_threads(threads)
    n, c, h, w = x.shape
    co, ci, kh, kw = weight.shape
    w2 = weight.reshape(co, ci * kh * kw)
    w2t = np.ascontiguousarray(w2.T)
    cols = _deform_cols(x, offsets, kh, kw, prims, nt)
    d_out3 = d_out.reshape(n, co, h * w)
    d_b = d_out.sum(axis=(0, 2, 3))
    d_w2 = np.zeros((co, ci * kh * kw), dtype=x.dtype)
    d_cols = np.empty_like(cols)
    for ni in range(n):
        d_w2 += np.matmul(d_out3[ni], cols[ni].T)
        np.matmul(w2t, d_out3[ni], out=d_cols[ni])
    d_cols = d_cols.reshape(n, ci, kh * kw, h, w)
    d_x = np.zeros_like(x)
    d_off = np.empty_like(offsets)
    for j in range(kh * kw):
        d_col = np.ascontiguousarray(d_cols[:, :, j])
        prims.scatter_tap(d_x, d_col, offsets, kh, kw, j, nt)
        dsy, dsx = prims.offset_grad_tap(x, offsets, kh, kw, j, d_col, nt)
        d_off[:, 2 * j] = dsy
        d_off[:, 2 * j + 1] = dsx
    return d_x, d_off, d_w2.reshape(weight.shape), d_b
