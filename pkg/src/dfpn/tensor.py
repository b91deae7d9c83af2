"""Rank-4 tensor helpers.

All activations, parameters and gradients are dense float32/float64
ndarrays laid out (batch, channels, height, width), row-major. The
helpers here are pure: inputs are never mutated.
"""

import numpy as np

Shape = tuple[int, int, int, int]


def check_tensor4(x, name="tensor"):
    x = np.asarray(x)
    if x.ndim != 4:
        raise ValueError(f"{name}: expected 4 dims (n, c, h, w), got shape {x.shape}")
    return x


def concat_channels(parts):
    """Concatenate along the channel axis; all parts must share (n, h, w)."""
    if not parts:
        raise ValueError("concat_channels: empty part list")
    parts = [check_tensor4(p, f"part {i}") for i, p in enumerate(parts)]
    n, _, h, w = parts[0].shape
    for i, p in enumerate(parts[1:], start=1):
        if p.shape[0] != n or p.shape[2:] != (h, w):
            raise ValueError(
                f"concat_channels: part {i} has dims {p.shape}, incompatible with part 0 {parts[0].shape}"
            )
    return np.concatenate(parts, axis=1)


def split_channels(x, sizes):
    """Inverse of concat_channels for the recorded channel block sizes."""
    x = check_tensor4(x)
    if sum(sizes) != x.shape[1]:
        raise ValueError(f"split_channels: sizes {sizes} do not sum to {x.shape[1]} channels")
    out = []
    start = 0
    for s in sizes:
        out.append(x[:, start : start + s])
        start += s
    return out


def add(a, b):
    a = check_tensor4(a, "a")
    b = check_tensor4(b, "b")
    if a.shape != b.shape:
        raise ValueError(f"add: shape mismatch {a.shape} vs {b.shape}")
    return a + b


def reduce_spatial(x, kind):
    """Collapse (h, w) to (1, 1) per channel by mean or max."""
    x = check_tensor4(x)
    if x.shape[2] * x.shape[3] == 0:
        raise ValueError("reduce_spatial: empty spatial plane")
    if kind == "mean":
        return x.mean(axis=(2, 3), keepdims=True)
    if kind == "max":
        return x.max(axis=(2, 3), keepdims=True)
    raise ValueError(f"reduce_spatial: kind must be 'mean' or 'max', got {kind!r}")


def reduce_channels(x, kind):
    """Collapse channels to a single per-pixel value by mean or max."""
    x = check_tensor4(x)
    if x.shape[1] == 0:
        raise ValueError("reduce_channels: no channels")
    if kind == "mean":
        return x.mean(axis=1, keepdims=True)
    if kind == "max":
        return x.max(axis=1, keepdims=True)
    raise ValueError(f"reduce_channels: kind must be 'mean' or 'max', got {kind!r}")
