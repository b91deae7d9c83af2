"""Trainable layers with explicit forward/backward passes.

Every backward takes a context holding the forward *inputs* only and
recomputes whatever intermediates it needs; no layer mutates its inputs.
Gradient shapes always mirror the values they differentiate.
"""

import math
from dataclasses import dataclass

import numpy as np

from dfpn import kernels
from dfpn.tensor import add, check_tensor4, concat_channels


@dataclass(frozen=True)
class ConvParams:
    weight: np.ndarray  # (c_out, c_in, k_h, k_w)
    bias: np.ndarray  # (c_out,)


@dataclass(frozen=True)
class ConvCtx:
    x: np.ndarray
    params: ConvParams
    pad: int


@dataclass(frozen=True)
class DeformCtx:
    x: np.ndarray
    offsets: np.ndarray
    params: ConvParams


@dataclass
class LayerGrad:
    d_input: np.ndarray
    d_weight: np.ndarray | None = None
    d_bias: np.ndarray | None = None
    d_offsets: np.ndarray | None = None


def kernel_grid(kh, kw):
    """Tap displacements of a k x k kernel, row-major, centred on the output."""
    return [(ky - kh // 2, kx - kw // 2) for ky in range(kh) for kx in range(kw)]


def _check_conv_args(x, p):
    x = check_tensor4(x, "input")
    if p.weight.ndim != 4:
        raise ValueError(f"conv weight must be 4-d, got {p.weight.shape}")
    if p.bias.shape != (p.weight.shape[0],):
        raise ValueError(f"bias shape {p.bias.shape} does not match {p.weight.shape[0]} output channels")
    if x.shape[1] != p.weight.shape[1]:
        raise ValueError(f"input has {x.shape[1]} channels, weight expects {p.weight.shape[1]}")
    return x


def conv2d(x, p, pad=1):
    """Stride-1 cross-correlation with zero padding."""
    x = _check_conv_args(x, p)
    return kernels.conv2d_forward(np.ascontiguousarray(x), p.weight, p.bias, pad)


def conv2d_backward(ctx, d_out):
    x = ctx.x
    if d_out.shape[0] != x.shape[0] or d_out.shape[1] != ctx.params.weight.shape[0]:
        raise ValueError(f"d_out shape {d_out.shape} does not match forward context")
    d_x, d_w, d_b = kernels.conv2d_backward(
        np.ascontiguousarray(x), ctx.params.weight, np.ascontiguousarray(d_out), ctx.pad
    )
    return LayerGrad(d_input=d_x, d_weight=d_w, d_bias=d_b)


def relu(x):
    return np.maximum(x, 0)


def relu_backward(x, d_out):
    """Pass-through where x > 0; the subgradient at exactly 0 is 0."""
    return LayerGrad(d_input=np.where(x > 0, d_out, 0))


def bilinear_sample(plane, y, x):
    """4-neighbour bilinear read of a 2-d map; out-of-bounds neighbours read 0.

    Continuous and piecewise-bilinear in (y, x); at integer coordinates the
    value is the stored pixel.
    """
    plane = np.asarray(plane)
    h, w = plane.shape
    y0 = math.floor(y)
    x0 = math.floor(x)
    fy = y - y0
    fx = x - x0
    acc = 0.0
    for dy, dx, wgt in (
        (0, 0, (1.0 - fy) * (1.0 - fx)),
        (0, 1, (1.0 - fy) * fx),
        (1, 0, fy * (1.0 - fx)),
        (1, 1, fy * fx),
    ):
        yi, xi = y0 + dy, x0 + dx
        if 0 <= yi < h and 0 <= xi < w:
            acc += wgt * float(plane[yi, xi])
    return acc


def _check_deform_args(x, offsets, p):
    x = _check_conv_args(x, p)
    offsets = check_tensor4(offsets, "offsets")
    kh, kw = p.weight.shape[2], p.weight.shape[3]
    if offsets.shape[1] != 2 * kh * kw:
        raise ValueError(f"offsets have {offsets.shape[1]} channels, expected {2 * kh * kw} for a {kh}x{kw} kernel")
    if offsets.shape[0] != x.shape[0] or offsets.shape[2:] != x.shape[2:]:
        raise ValueError(f"offsets shape {offsets.shape} does not match input {x.shape}")
    if offsets.dtype != x.dtype:
        raise ValueError("offsets and input must share a dtype")
    return x, offsets


def deform_conv2d(x, offsets, p):
    """Convolution whose taps are displaced per pixel by learned 2-d offsets.

    One offset group: the same (dy, dx) field displaces every input channel.
    Sampling is bilinear with zero fill outside the frame, so zero offsets
    reproduce the plain same-padded convolution.
    """
    x, offsets = _check_deform_args(x, offsets, p)
    return kernels.deform_conv2d_forward(
        np.ascontiguousarray(x), np.ascontiguousarray(offsets), p.weight, p.bias
    )


def deform_conv2d_backward(ctx, d_out):
    x, offsets = _check_deform_args(ctx.x, ctx.offsets, ctx.params)
    if d_out.shape != (x.shape[0], ctx.params.weight.shape[0], x.shape[2], x.shape[3]):
        raise ValueError(f"d_out shape {d_out.shape} does not match forward context")
    d_x, d_off, d_w, d_b = kernels.deform_conv2d_backward(
        np.ascontiguousarray(x), np.ascontiguousarray(offsets), ctx.params.weight, np.ascontiguousarray(d_out)
    )
    return LayerGrad(d_input=d_x, d_weight=d_w, d_bias=d_b, d_offsets=d_off)


@dataclass(frozen=True)
class RdbParams:
    """Densely connected conv stack with 1x1 local fusion and residual add.

    dense[i] maps base + i*growth channels to growth channels (3x3);
    fusion maps base + depth*growth back to base (1x1).
    """

    dense: tuple[ConvParams, ...]
    fusion: ConvParams


@dataclass(frozen=True)
class RdbCtx:
    x: np.ndarray
    params: RdbParams


@dataclass
class RdbGrad:
    d_input: np.ndarray
    dense: list[LayerGrad]
    fusion: LayerGrad


def _rdb_run(x, p):
    """Forward pass returning the per-layer inputs needed by the backward."""
    feats = x
    stages = []
    for conv in p.dense:
        pre = conv2d(feats, conv, pad=1)
        stages.append((feats, pre))
        feats = concat_channels([feats, relu(pre)])
    fused = conv2d(feats, p.fusion, pad=0)
    return add(fused, x), stages, feats


def rdb_forward(x, p):
    x = check_tensor4(x)
    base = p.fusion.weight.shape[0]
    if x.shape[1] != base:
        raise ValueError(f"input has {x.shape[1]} channels, block expects {base}")
    return _rdb_run(x, p)[0]


def rdb_backward(ctx, d_out):
    x, p = ctx.x, ctx.params
    _, stages, feats = _rdb_run(x, p)
    fusion_grad = conv2d_backward(ConvCtx(feats, p.fusion, 0), d_out)
    d_feats = fusion_grad.d_input
    dense_grads: list[LayerGrad | None] = [None] * len(p.dense)
    for i in range(len(p.dense) - 1, -1, -1):
        layer_in, pre = stages[i]
        cin = layer_in.shape[1]
        d_in_part = d_feats[:, :cin]
        d_new = relu_backward(pre, d_feats[:, cin:]).d_input
        g = conv2d_backward(ConvCtx(layer_in, p.dense[i], 1), np.ascontiguousarray(d_new))
        dense_grads[i] = g
        d_feats = d_in_part + g.d_input
    # residual path
    d_x = d_feats + d_out
    return RdbGrad(d_input=d_x, dense=dense_grads, fusion=fusion_grad)
