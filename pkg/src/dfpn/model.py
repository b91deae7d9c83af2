"""The frame-prediction network: six stages assembled around deformable fusion.

Pipeline per forward pass, all stages stride-1 / same-padded so spatial
dims are preserved end to end:

  1. a shared feature extractor (conv + residual dense blocks) applied to
     each of the N input frames separately;
  2. a bottleneck over the channel-concatenated features: one conv reduces
     the channel count by a factor of N, then a residual dense block stack;
  3. an offset convolution emitting N per-pixel offset fields, one per
     input frame (zero-initialised so training starts deformation-free);
  4. N deformable convolutions, each fusing one frame's features under its
     own offset field and weights;
  5. optional channel/spatial attention over the concatenated result;
  6. reconstruction: a fusion conv back to the base width, a residual dense
     block stack, and a final conv down to the image channels.

Parameter names follow a stable `stage.block.layer` scheme (see
parameter_shapes); init, counting, forward, backward and checkpoint I/O
all agree on that name set by construction.
"""

from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np

from dfpn.attention import MODES, AttentionGrad, AttentionParams, cbam, cbam_backward
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
)
from dfpn.tensor import concat_channels, split_channels

DEFORM_KERNEL = 3
OFFSET_CHANNELS = 2 * DEFORM_KERNEL * DEFORM_KERNEL  # 18 per offset field


@dataclass(frozen=True)
class ModelConfig:
    n_inputs: int = 4
    base_channels: int = 64
    feat_rdbs: int = 2
    bottleneck_rdbs: int = 12
    recon_rdbs: int = 8
    rdb_depth: int = 6
    rdb_growth: int = 32
    attention: str = "both"
    attention_ratio: int = 16
    spatial_kernel: int = 7
    image_channels: int = 1

    def validate(self):
        if self.n_inputs < 1:
            raise ValueError("n_inputs must be >= 1")
        if self.base_channels < self.rdb_growth:
            raise ValueError("base_channels must be >= rdb_growth")
        if min(self.feat_rdbs, self.bottleneck_rdbs, self.recon_rdbs) < 0:
            raise ValueError("block counts must be >= 0")
        if self.rdb_depth < 1 or self.rdb_growth < 1:
            raise ValueError("rdb_depth and rdb_growth must be >= 1")
        if self.image_channels < 1:
            raise ValueError("image_channels must be >= 1")
        if self.attention not in MODES:
            raise ValueError(f"attention must be one of {MODES}")
        if self.attention in ("channel", "both"):
            cat = self.base_channels * self.n_inputs
            if self.attention_ratio < 1 or cat % self.attention_ratio != 0:
                raise ValueError(f"attention_ratio {self.attention_ratio} must divide {cat} channels")
        if self.attention in ("spatial", "both") and self.spatial_kernel % 2 != 1:
            raise ValueError("spatial_kernel must be odd")
        return self

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        cfg = cls(**d)
        cfg.validate()
        return cfg


def _rdb_shapes(prefix, base, cfg):
    shapes = {}
    for j in range(cfg.rdb_depth):
        shapes[f"{prefix}.dense{j}.weight"] = (cfg.rdb_growth, base + j * cfg.rdb_growth, 3, 3)
        shapes[f"{prefix}.dense{j}.bias"] = (cfg.rdb_growth,)
    fused_in = base + cfg.rdb_depth * cfg.rdb_growth
    shapes[f"{prefix}.fusion.weight"] = (base, fused_in, 1, 1)
    shapes[f"{prefix}.fusion.bias"] = (base,)
    return shapes


def parameter_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Canonical ordered name -> shape map; the single source of truth."""
    cfg.validate()
    base = cfg.base_channels
    cat = base * cfg.n_inputs
    shapes: dict[str, tuple[int, ...]] = {}
    shapes["feat.conv.weight"] = (base, cfg.image_channels, 3, 3)
    shapes["feat.conv.bias"] = (base,)
    for i in range(cfg.feat_rdbs):
        shapes.update(_rdb_shapes(f"feat.rdb{i}", base, cfg))
    shapes["bottleneck.reduce.weight"] = (base, cat, 3, 3)
    shapes["bottleneck.reduce.bias"] = (base,)
    for i in range(cfg.bottleneck_rdbs):
        shapes.update(_rdb_shapes(f"bottleneck.rdb{i}", base, cfg))
    shapes["bottleneck.offset.weight"] = (cfg.n_inputs * OFFSET_CHANNELS, base, 3, 3)
    shapes["bottleneck.offset.bias"] = (cfg.n_inputs * OFFSET_CHANNELS,)
    for i in range(cfg.n_inputs):
        shapes[f"deform{i}.weight"] = (base, base, 3, 3)
        shapes[f"deform{i}.bias"] = (base,)
    if cfg.attention in ("channel", "both"):
        hidden = cat // cfg.attention_ratio
        shapes["attn.channel.fc0.weight"] = (hidden, cat, 1, 1)
        shapes["attn.channel.fc0.bias"] = (hidden,)
        shapes["attn.channel.fc1.weight"] = (cat, hidden, 1, 1)
        shapes["attn.channel.fc1.bias"] = (cat,)
    if cfg.attention in ("spatial", "both"):
        shapes["attn.spatial.conv.weight"] = (1, 2, cfg.spatial_kernel, cfg.spatial_kernel)
        shapes["attn.spatial.conv.bias"] = (1,)
    shapes["recon.fuse.weight"] = (base, cat, 3, 3)
    shapes["recon.fuse.bias"] = (base,)
    for i in range(cfg.recon_rdbs):
        shapes.update(_rdb_shapes(f"recon.rdb{i}", base, cfg))
    shapes["recon.final.weight"] = (cfg.image_channels, base, 3, 3)
    shapes["recon.final.bias"] = (cfg.image_channels,)
    return shapes


def count_parameters(cfg: ModelConfig) -> int:
    return sum(int(np.prod(s)) for s in parameter_shapes(cfg).values())


def init_parameters(cfg: ModelConfig, seed: int, dtype=np.float32) -> dict[str, np.ndarray]:
    """Fan-in uniform weights, zero biases; the offset conv starts all-zero
    so the network begins as a plain convolutional predictor."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in parameter_shapes(cfg).items():
        if name.startswith("bottleneck.offset.") or name.endswith(".bias"):
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            fan_in = int(np.prod(shape[1:]))
            bound = np.sqrt(1.0 / fan_in)
            params[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return params


def conv_bundle(params, prefix) -> ConvParams:
    return ConvParams(params[f"{prefix}.weight"], params[f"{prefix}.bias"])


def rdb_bundle(params, prefix, cfg) -> RdbParams:
    dense = tuple(conv_bundle(params, f"{prefix}.dense{j}") for j in range(cfg.rdb_depth))
    return RdbParams(dense=dense, fusion=conv_bundle(params, f"{prefix}.fusion"))


def attention_bundle(params, cfg) -> AttentionParams:
    mlp0 = mlp1 = spatial = None
    if cfg.attention in ("channel", "both"):
        mlp0 = conv_bundle(params, "attn.channel.fc0")
        mlp1 = conv_bundle(params, "attn.channel.fc1")
    if cfg.attention in ("spatial", "both"):
        spatial = conv_bundle(params, "attn.spatial.conv")
    return AttentionParams(mlp0=mlp0, mlp1=mlp1, spatial=spatial, ratio=cfg.attention_ratio)


@dataclass
class Tape:
    """Stage inputs retained by the forward pass for the backward pass."""

    cfg: ModelConfig
    params: dict[str, np.ndarray]
    frames: np.ndarray
    feat_rdb_ins: list[list[np.ndarray]]
    feats: list[np.ndarray]
    fused: np.ndarray
    bott_rdb_ins: list[np.ndarray]
    offset_in: np.ndarray
    offsets: list[np.ndarray]
    deformed: list[np.ndarray]
    att_in: np.ndarray
    att_out: np.ndarray
    recon_rdb_ins: list[np.ndarray]
    final_in: np.ndarray
    prediction: np.ndarray = field(repr=False, default=None)


def extract_features(frame, params, cfg):
    """Shared per-frame feature extractor; returns (features, rdb inputs)."""
    z = conv2d(frame, conv_bundle(params, "feat.conv"), pad=1)
    rdb_ins = []
    for i in range(cfg.feat_rdbs):
        rdb_ins.append(z)
        z = rdb_forward(z, rdb_bundle(params, f"feat.rdb{i}", cfg))
    return z, rdb_ins


def predict_offsets(feats, params, cfg):
    """Bottleneck over concatenated features; returns per-frame offset fields."""
    fused = concat_channels(feats)
    z = conv2d(fused, conv_bundle(params, "bottleneck.reduce"), pad=1)
    rdb_ins = []
    for i in range(cfg.bottleneck_rdbs):
        rdb_ins.append(z)
        z = rdb_forward(z, rdb_bundle(params, f"bottleneck.rdb{i}", cfg))
    offsets_all = conv2d(z, conv_bundle(params, "bottleneck.offset"), pad=1)
    offsets = split_channels(offsets_all, [OFFSET_CHANNELS] * cfg.n_inputs)
    return offsets, fused, rdb_ins, z


def reconstruct(att_out, params, cfg):
    """Fusion conv, residual dense stack, and the final image-channel conv."""
    z = conv2d(att_out, conv_bundle(params, "recon.fuse"), pad=1)
    rdb_ins = []
    for i in range(cfg.recon_rdbs):
        rdb_ins.append(z)
        z = rdb_forward(z, rdb_bundle(params, f"recon.rdb{i}", cfg))
    pred = conv2d(z, conv_bundle(params, "recon.final"), pad=1)
    return pred, rdb_ins, z


def dfpn_forward(frames, params, cfg: ModelConfig):
    """Full forward pass.

    frames: (n, N, h, w) with the N previous frames as channels, oldest
    first, pixel values normalised to [0, 1]. Returns (prediction, tape)
    with prediction shaped (n, image_channels, h, w).
    """
    cfg.validate()
    frames = np.asarray(frames)
    if frames.ndim != 4:
        raise ValueError(f"frames must be (n, n_inputs, h, w), got {frames.shape}")
    if frames.shape[1] != cfg.n_inputs:
        raise ValueError(f"expected {cfg.n_inputs} input frames, got {frames.shape[1]}")
    if cfg.image_channels != 1:
        raise ValueError("the frame stack entry point supports single-channel frames only")

    feats = []
    feat_rdb_ins = []
    for i in range(cfg.n_inputs):
        f, rdb_ins = extract_features(np.ascontiguousarray(frames[:, i : i + 1]), params, cfg)
        feats.append(f)
        feat_rdb_ins.append(rdb_ins)

    offsets, fused, bott_rdb_ins, offset_in = predict_offsets(feats, params, cfg)

    deformed = [
        deform_conv2d(feats[i], offsets[i], conv_bundle(params, f"deform{i}")) for i in range(cfg.n_inputs)
    ]
    att_in = concat_channels(deformed)
    att_out = cbam(att_in, attention_bundle(params, cfg), cfg.attention)
    pred, recon_rdb_ins, final_in = reconstruct(att_out, params, cfg)

    tape = Tape(
        cfg=cfg,
        params=params,
        frames=frames,
        feat_rdb_ins=feat_rdb_ins,
        feats=feats,
        fused=fused,
        bott_rdb_ins=bott_rdb_ins,
        offset_in=offset_in,
        offsets=offsets,
        deformed=deformed,
        att_in=att_in,
        att_out=att_out,
        recon_rdb_ins=recon_rdb_ins,
        final_in=final_in,
        prediction=pred,
    )
    return pred, tape


def _acc(grads, name, value):
    if name in grads:
        grads[name] = grads[name] + value
    else:
        grads[name] = value


def _acc_rdb(grads, prefix, g):
    for j, lg in enumerate(g.dense):
        _acc(grads, f"{prefix}.dense{j}.weight", lg.d_weight)
        _acc(grads, f"{prefix}.dense{j}.bias", lg.d_bias)
    _acc(grads, f"{prefix}.fusion.weight", g.fusion.d_weight)
    _acc(grads, f"{prefix}.fusion.bias", g.fusion.d_bias)


def dfpn_backward(tape: Tape, d_prediction, return_frame_grads=False):
    """Reverse-mode gradients for every parameter, keyed like the params."""
    cfg, params = tape.cfg, tape.params
    if d_prediction.shape != tape.prediction.shape:
        raise ValueError(f"d_prediction shape {d_prediction.shape} does not match prediction")
    grads: dict[str, np.ndarray] = {}

    # reconstruction, in reverse
    g = conv2d_backward(ConvCtx(tape.final_in, conv_bundle(params, "recon.final"), 1), d_prediction)
    _acc(grads, "recon.final.weight", g.d_weight)
    _acc(grads, "recon.final.bias", g.d_bias)
    d = g.d_input
    for i in range(cfg.recon_rdbs - 1, -1, -1):
        rg = rdb_backward(RdbCtx(tape.recon_rdb_ins[i], rdb_bundle(params, f"recon.rdb{i}", cfg)), d)
        _acc_rdb(grads, f"recon.rdb{i}", rg)
        d = rg.d_input
    g = conv2d_backward(ConvCtx(tape.att_out, conv_bundle(params, "recon.fuse"), 1), d)
    _acc(grads, "recon.fuse.weight", g.d_weight)
    _acc(grads, "recon.fuse.bias", g.d_bias)

    # attention
    ag: AttentionGrad = cbam_backward(tape.att_in, attention_bundle(params, cfg), cfg.attention, g.d_input)
    if ag.mlp0 is not None:
        _acc(grads, "attn.channel.fc0.weight", ag.mlp0.d_weight)
        _acc(grads, "attn.channel.fc0.bias", ag.mlp0.d_bias)
        _acc(grads, "attn.channel.fc1.weight", ag.mlp1.d_weight)
        _acc(grads, "attn.channel.fc1.bias", ag.mlp1.d_bias)
    if ag.spatial is not None:
        _acc(grads, "attn.spatial.conv.weight", ag.spatial.d_weight)
        _acc(grads, "attn.spatial.conv.bias", ag.spatial.d_bias)

    # deformable fusion: gradients w.r.t. features and offset fields
    d_deformed = split_channels(ag.d_input, [cfg.base_channels] * cfg.n_inputs)
    d_feats = []
    d_offsets = []
    for i in range(cfg.n_inputs):
        dg = deform_conv2d_backward(
            DeformCtx(tape.feats[i], tape.offsets[i], conv_bundle(params, f"deform{i}")),
            np.ascontiguousarray(d_deformed[i]),
        )
        _acc(grads, f"deform{i}.weight", dg.d_weight)
        _acc(grads, f"deform{i}.bias", dg.d_bias)
        d_feats.append(dg.d_input)
        d_offsets.append(dg.d_offsets)

    # bottleneck, in reverse: offset conv, RDB stack, reduce conv
    g = conv2d_backward(
        ConvCtx(tape.offset_in, conv_bundle(params, "bottleneck.offset"), 1),
        concat_channels(d_offsets),
    )
    _acc(grads, "bottleneck.offset.weight", g.d_weight)
    _acc(grads, "bottleneck.offset.bias", g.d_bias)
    d = g.d_input
    for i in range(cfg.bottleneck_rdbs - 1, -1, -1):
        rg = rdb_backward(RdbCtx(tape.bott_rdb_ins[i], rdb_bundle(params, f"bottleneck.rdb{i}", cfg)), d)
        _acc_rdb(grads, f"bottleneck.rdb{i}", rg)
        d = rg.d_input
    g = conv2d_backward(ConvCtx(tape.fused, conv_bundle(params, "bottleneck.reduce"), 1), d)
    _acc(grads, "bottleneck.reduce.weight", g.d_weight)
    _acc(grads, "bottleneck.reduce.bias", g.d_bias)
    for i, part in enumerate(split_channels(g.d_input, [cfg.base_channels] * cfg.n_inputs)):
        d_feats[i] = d_feats[i] + part

    # shared feature extractor: gradients from every frame accumulate
    d_frames = np.zeros_like(tape.frames) if return_frame_grads else None
    for i in range(cfg.n_inputs):
        d = d_feats[i]
        for k in range(cfg.feat_rdbs - 1, -1, -1):
            rg = rdb_backward(RdbCtx(tape.feat_rdb_ins[i][k], rdb_bundle(params, f"feat.rdb{k}", cfg)), d)
            _acc_rdb(grads, f"feat.rdb{k}", rg)
            d = rg.d_input
        g = conv2d_backward(
            ConvCtx(np.ascontiguousarray(tape.frames[:, i : i + 1]), conv_bundle(params, "feat.conv"), 1), d
        )
        _acc(grads, "feat.conv.weight", g.d_weight)
        _acc(grads, "feat.conv.bias", g.d_bias)
        if return_frame_grads:
            d_frames[:, i : i + 1] = g.d_input

    if return_frame_grads:
        return grads, d_frames
    return grads
