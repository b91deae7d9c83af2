"""Channel and spatial attention gates, applied sequentially (CBAM style).

Channel attention squeezes each channel with global mean and max pooling,
pushes both pooled vectors through a shared two-layer bottleneck MLP
(implemented as 1x1 convolutions) and gates channels with the sigmoid of
the sum. Spatial attention pools across channels instead and gates pixels
with a sigmoid conv map. Neither changes the tensor shape.
"""

from dataclasses import dataclass

import numpy as np

from dfpn.layers import ConvCtx, ConvParams, LayerGrad, conv2d, conv2d_backward, relu, relu_backward
from dfpn.tensor import check_tensor4, concat_channels, reduce_channels, reduce_spatial

MODES = ("none", "channel", "spatial", "both")


@dataclass(frozen=True)
class AttentionParams:
    """Parameter bundle; unused halves may be None depending on the mode."""

    mlp0: ConvParams | None = None  # c -> c/r, 1x1
    mlp1: ConvParams | None = None  # c/r -> c, 1x1
    spatial: ConvParams | None = None  # 2 -> 1, k x k
    ratio: int = 16


@dataclass
class AttentionGrad:
    d_input: np.ndarray
    mlp0: LayerGrad | None = None
    mlp1: LayerGrad | None = None
    spatial: LayerGrad | None = None


def _sigmoid(s):
    out = np.empty_like(s)
    pos = s >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-s[pos]))
    es = np.exp(s[~pos])
    out[~pos] = es / (1.0 + es)
    return out


def _mlp(v, p):
    h = relu(conv2d(v, p.mlp0, pad=0))
    return conv2d(h, p.mlp1, pad=0)


def channel_attention(x, p):
    x = check_tensor4(x)
    c = x.shape[1]
    if p.mlp0 is None or p.mlp1 is None:
        raise ValueError("channel attention requires the MLP parameters")
    if c % p.ratio != 0:
        raise ValueError(f"reduction ratio {p.ratio} does not divide {c} channels")
    gate = _sigmoid(_mlp(reduce_spatial(x, "mean"), p) + _mlp(reduce_spatial(x, "max"), p))
    return x * gate


def _channel_argmax_scatter(x, d_pool):
    """Route the max-pool gradient to each channel's (first) spatial argmax."""
    n, c, h, w = x.shape
    flat = x.reshape(n, c, h * w)
    idx = flat.argmax(axis=2)
    d_x = np.zeros_like(flat)
    ni, ci = np.meshgrid(np.arange(n), np.arange(c), indexing="ij")
    d_x[ni, ci, idx] = d_pool[:, :, 0, 0]
    return d_x.reshape(x.shape)


def channel_attention_backward(x, p, d_out):
    n, c, h, w = x.shape
    avg = reduce_spatial(x, "mean")
    mx = reduce_spatial(x, "max")
    grads = {}
    branches = {}
    for key, v in (("avg", avg), ("max", mx)):
        pre = conv2d(v, p.mlp0, pad=0)
        hid = relu(pre)
        out = conv2d(hid, p.mlp1, pad=0)
        branches[key] = (v, pre, hid, out)
    s = branches["avg"][3] + branches["max"][3]
    gate = _sigmoid(s)

    d_x = d_out * gate
    d_gate = (d_out * x).sum(axis=(2, 3), keepdims=True)
    d_s = d_gate * gate * (1.0 - gate)
    mlp0_grad = mlp1_grad = None
    for key in ("avg", "max"):
        v, pre, hid, _ = branches[key]
        g1 = conv2d_backward(ConvCtx(hid, p.mlp1, 0), d_s)
        d_hid = relu_backward(pre, g1.d_input).d_input
        g0 = conv2d_backward(ConvCtx(v, p.mlp0, 0), np.ascontiguousarray(d_hid))
        grads[key] = (g0, g1)
        if key == "avg":
            d_x = d_x + g0.d_input / (h * w)
        else:
            d_x = d_x + _channel_argmax_scatter(x, g0.d_input)
    mlp0_grad = LayerGrad(
        d_input=None,
        d_weight=grads["avg"][0].d_weight + grads["max"][0].d_weight,
        d_bias=grads["avg"][0].d_bias + grads["max"][0].d_bias,
    )
    mlp1_grad = LayerGrad(
        d_input=None,
        d_weight=grads["avg"][1].d_weight + grads["max"][1].d_weight,
        d_bias=grads["avg"][1].d_bias + grads["max"][1].d_bias,
    )
    return AttentionGrad(d_input=d_x, mlp0=mlp0_grad, mlp1=mlp1_grad)


def spatial_attention(x, p):
    x = check_tensor4(x)
    if p.spatial is None:
        raise ValueError("spatial attention requires the conv parameters")
    k = p.spatial.weight.shape[2]
    pooled = concat_channels([reduce_channels(x, "mean"), reduce_channels(x, "max")])
    gate = _sigmoid(conv2d(pooled, p.spatial, pad=k // 2))
    return x * gate


def _spatial_argmax_scatter(x, d_pool):
    """Route the per-pixel channel-max gradient to the (first) argmax channel."""
    n, c, h, w = x.shape
    idx = x.argmax(axis=1, keepdims=True)
    d_x = np.zeros_like(x)
    np.put_along_axis(d_x, idx, d_pool, axis=1)
    return d_x


def spatial_attention_backward(x, p, d_out):
    c = x.shape[1]
    k = p.spatial.weight.shape[2]
    pooled = concat_channels([reduce_channels(x, "mean"), reduce_channels(x, "max")])
    s = conv2d(pooled, p.spatial, pad=k // 2)
    gate = _sigmoid(s)

    d_x = d_out * gate
    d_gate = (d_out * x).sum(axis=1, keepdims=True)
    d_s = d_gate * gate * (1.0 - gate)
    g = conv2d_backward(ConvCtx(pooled, p.spatial, k // 2), np.ascontiguousarray(d_s))
    d_x = d_x + g.d_input[:, 0:1] / c
    d_x = d_x + _spatial_argmax_scatter(x, g.d_input[:, 1:2])
    return AttentionGrad(d_input=d_x, spatial=g)


def cbam(x, p, mode):
    """Apply the configured attention blocks; channel first, then spatial."""
    if mode not in MODES:
        raise ValueError(f"attention mode must be one of {MODES}, got {mode!r}")
    out = x
    if mode in ("channel", "both"):
        out = channel_attention(out, p)
    if mode in ("spatial", "both"):
        out = spatial_attention(out, p)
    return out


def cbam_backward(x, p, mode, d_out):
    if mode == "none":
        return AttentionGrad(d_input=d_out)
    if mode == "channel":
        return channel_attention_backward(x, p, d_out)
    if mode == "spatial":
        return spatial_attention_backward(x, p, d_out)
    mid = channel_attention(x, p)
    sg = spatial_attention_backward(mid, p, d_out)
    cg = channel_attention_backward(x, p, sg.d_input)
    return AttentionGrad(d_input=cg.d_input, mlp0=cg.mlp0, mlp1=cg.mlp1, spatial=sg.spatial)
