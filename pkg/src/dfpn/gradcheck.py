"""Finite-difference verification of every analytic gradient.

All checks run in float64 with central differences so the measured error
reflects the backward implementation, not rounding. The error metric is
max|analytic - numeric| normalised by the largest numeric entry, which
stays meaningful when individual entries are near zero.

Offsets are kept away from integer coordinates (fraction 0.37) because
the bilinear read is only piecewise smooth there.
"""

import numpy as np

from dfpn.attention import (
    AttentionParams,
    cbam,
    cbam_backward,
    channel_attention,
    channel_attention_backward,
    spatial_attention,
    spatial_attention_backward,
)
from dfpn.layers import (
    ConvCtx,
    ConvParams,
    DeformCtx,
    RdbCtx,
    RdbParams,
    conv2d,
    conv2d_backward,
    deform_conv2d,
    deform_conv2d_backward,
    rdb_backward,
    rdb_forward,
    relu,
    relu_backward,
)
from dfpn.model import ModelConfig, dfpn_backward, dfpn_forward, init_parameters
from dfpn.optim import l1_loss

STEP = 1e-3
UNIT_TOL = 1e-3
# The composite check uses a smaller step: with many stacked ReLUs a 1e-3
# parameter perturbation routinely crosses activation kinks, which corrupts
# the numeric (not the analytic) gradient.
MODEL_STEP = 1e-5
MODEL_TOL = 1e-2


def numerical_grad(f, x, step=STEP):
    """Central-difference gradient of scalar f() w.r.t. the array x (in place)."""
    g = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = x[i]
        x[i] = orig + step
        fp = f()
        x[i] = orig - step
        fm = f()
        x[i] = orig
        g[i] = (fp - fm) / (2.0 * step)
    return g


def max_rel_err(analytic, numeric):
    scale = max(float(np.abs(numeric).max()), 1e-12)
    return float(np.abs(analytic - numeric).max()) / scale


def _offset_field(rng, shape):
    """Random offsets with fractional part 0.37: well clear of integer kinks."""
    return rng.integers(-2, 2, size=shape).astype(np.float64) + 0.37


def check_conv2d(seed=0):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((1, 2, 5, 5))
    p = ConvParams(rng.standard_normal((3, 2, 3, 3)), rng.standard_normal(3))
    proj = rng.standard_normal((1, 3, 5, 5))
    loss = lambda: float((conv2d(x, p, pad=1) * proj).sum())
    g = conv2d_backward(ConvCtx(x, p, 1), proj)
    return max(
        max_rel_err(g.d_input, numerical_grad(loss, x)),
        max_rel_err(g.d_weight, numerical_grad(loss, p.weight)),
        max_rel_err(g.d_bias, numerical_grad(loss, p.bias)),
    )


def check_relu(seed=0):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((1, 3, 4, 4))
    x[np.abs(x) < 1e-2] += 0.5  # stay away from the kink at 0
    proj = rng.standard_normal(x.shape)
    loss = lambda: float((relu(x) * proj).sum())
    g = relu_backward(x, proj)
    return max_rel_err(g.d_input, numerical_grad(loss, x))


def check_deform_conv2d(seed=0):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((1, 2, 6, 6))
    p = ConvParams(rng.standard_normal((2, 2, 3, 3)), rng.standard_normal(2))
    off = _offset_field(rng, (1, 18, 6, 6))
    proj = rng.standard_normal((1, 2, 6, 6))
    loss = lambda: float((deform_conv2d(x, off, p) * proj).sum())
    g = deform_conv2d_backward(DeformCtx(x, off, p), proj)
    return {
        "input": max_rel_err(g.d_input, numerical_grad(loss, x)),
        "weight": max_rel_err(g.d_weight, numerical_grad(loss, p.weight)),
        "offset": max_rel_err(g.d_offsets, numerical_grad(loss, off)),
        "bias": max_rel_err(g.d_bias, numerical_grad(loss, p.bias)),
    }


def _rdb_params(rng, base=8, growth=4, depth=2):
    dense = tuple(
        ConvParams(
            rng.standard_normal((growth, base + j * growth, 3, 3)) * 0.3,
            rng.standard_normal(growth) * 0.1,
        )
        for j in range(depth)
    )
    fusion = ConvParams(
        rng.standard_normal((base, base + depth * growth, 1, 1)) * 0.3,
        rng.standard_normal(base) * 0.1,
    )
    return RdbParams(dense=dense, fusion=fusion)


def check_rdb(seed=0):
    rng = np.random.default_rng(seed)
    p = _rdb_params(rng)
    x = rng.standard_normal((1, 8, 5, 5))
    proj = rng.standard_normal(x.shape)
    loss = lambda: float((rdb_forward(x, p) * proj).sum())
    g = rdb_backward(RdbCtx(x, p), proj)
    worst = max_rel_err(g.d_input, numerical_grad(loss, x))
    for j, conv in enumerate(p.dense):
        worst = max(worst, max_rel_err(g.dense[j].d_weight, numerical_grad(loss, conv.weight)))
        worst = max(worst, max_rel_err(g.dense[j].d_bias, numerical_grad(loss, conv.bias)))
    worst = max(worst, max_rel_err(g.fusion.d_weight, numerical_grad(loss, p.fusion.weight)))
    worst = max(worst, max_rel_err(g.fusion.d_bias, numerical_grad(loss, p.fusion.bias)))
    return worst


def _attention_params(rng, c=8, ratio=2, k=5):
    return AttentionParams(
        mlp0=ConvParams(rng.standard_normal((c // ratio, c, 1, 1)), rng.standard_normal(c // ratio) * 0.1),
        mlp1=ConvParams(rng.standard_normal((c, c // ratio, 1, 1)), rng.standard_normal(c) * 0.1),
        spatial=ConvParams(rng.standard_normal((1, 2, k, k)) * 0.3, rng.standard_normal(1) * 0.1),
        ratio=ratio,
    )


def check_channel_attention(seed=0):
    rng = np.random.default_rng(seed)
    p = _attention_params(rng, c=8, ratio=2)
    x = rng.uniform(-4.0, 4.0, size=(1, 8, 4, 4))  # well-separated: stable argmax
    proj = rng.standard_normal(x.shape)
    loss = lambda: float((channel_attention(x, p) * proj).sum())
    g = channel_attention_backward(x, p, proj)
    return max(
        max_rel_err(g.d_input, numerical_grad(loss, x)),
        max_rel_err(g.mlp0.d_weight, numerical_grad(loss, p.mlp0.weight)),
        max_rel_err(g.mlp0.d_bias, numerical_grad(loss, p.mlp0.bias)),
        max_rel_err(g.mlp1.d_weight, numerical_grad(loss, p.mlp1.weight)),
        max_rel_err(g.mlp1.d_bias, numerical_grad(loss, p.mlp1.bias)),
    )


def check_spatial_attention(seed=0):
    rng = np.random.default_rng(seed)
    p = _attention_params(rng, c=4, ratio=2, k=5)
    x = rng.uniform(-4.0, 4.0, size=(1, 4, 6, 6))
    proj = rng.standard_normal(x.shape)
    loss = lambda: float((spatial_attention(x, p) * proj).sum())
    g = spatial_attention_backward(x, p, proj)
    return max(
        max_rel_err(g.d_input, numerical_grad(loss, x)),
        max_rel_err(g.spatial.d_weight, numerical_grad(loss, p.spatial.weight)),
        max_rel_err(g.spatial.d_bias, numerical_grad(loss, p.spatial.bias)),
    )


def check_cbam(seed=0):
    rng = np.random.default_rng(seed)
    p = _attention_params(rng, c=8, ratio=2, k=5)
    x = rng.uniform(-4.0, 4.0, size=(1, 8, 5, 5))
    proj = rng.standard_normal(x.shape)
    loss = lambda: float((cbam(x, p, "both") * proj).sum())
    g = cbam_backward(x, p, "both", proj)
    return max_rel_err(g.d_input, numerical_grad(loss, x))


def check_l1_loss(seed=0):
    rng = np.random.default_rng(seed)
    pred = rng.standard_normal((1, 1, 4, 4))
    gt = rng.standard_normal((1, 1, 4, 4))
    loss = lambda: l1_loss(pred, gt).loss
    g = l1_loss(pred, gt).d_prediction
    return max_rel_err(g, numerical_grad(loss, pred))


REDUCED_CFG = ModelConfig(
    n_inputs=4,
    base_channels=8,
    feat_rdbs=1,
    bottleneck_rdbs=2,
    recon_rdbs=1,
    rdb_depth=2,
    rdb_growth=4,
    attention="both",
    attention_ratio=16,
)


def check_model(seed=0, size=8):
    """Finite differences through the entire reduced network.

    The offset conv biases are nudged to fraction 0.37 so every sampling
    coordinate sits away from the bilinear kinks that zero init would hit.
    """
    rng = np.random.default_rng(seed)
    cfg = REDUCED_CFG
    params = init_parameters(cfg, seed, dtype=np.float64)
    params["bottleneck.offset.weight"] = rng.standard_normal(params["bottleneck.offset.weight"].shape) * 0.05
    params["bottleneck.offset.bias"] = np.full_like(params["bottleneck.offset.bias"], 0.37)
    frames = rng.uniform(0.0, 1.0, size=(1, cfg.n_inputs, size, size))
    gt = rng.uniform(0.0, 1.0, size=(1, 1, size, size))

    def loss():
        pred, _ = dfpn_forward(frames, params, cfg)
        return l1_loss(pred, gt).loss

    pred, tape = dfpn_forward(frames, params, cfg)
    grads = dfpn_backward(tape, l1_loss(pred, gt).d_prediction)
    worst = {}
    for name, value in params.items():
        worst[name] = max_rel_err(grads[name], numerical_grad(loss, value, step=MODEL_STEP))
    return worst


def unit_suite(seed=0):
    """Per-layer checks; returns {layer: max relative error}."""
    deform = check_deform_conv2d(seed)
    return {
        "conv2d": check_conv2d(seed),
        "relu": check_relu(seed),
        "deform_conv2d/input": deform["input"],
        "deform_conv2d/weight": deform["weight"],
        "deform_conv2d/offset": deform["offset"],
        "deform_conv2d/bias": deform["bias"],
        "rdb": check_rdb(seed),
        "channel_attention": check_channel_attention(seed),
        "spatial_attention": check_spatial_attention(seed),
        "cbam": check_cbam(seed),
        "l1_loss": check_l1_loss(seed),
    }
