"""Frame ingestion, clip sampling, and the synthetic-motion generator.

Frames are single-channel float arrays in [0, 1]. The canonical on-disk
interchange is binary PGM (P5, 8-bit), laid out `<dir>/frame_%06d.pgm`;
binary PPM (P6) is accepted on input and converted to gray with integer
BT.601 luma coefficients (299, 587, 114)/1000.
"""

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

FRAME_PATTERN = "frame_%06d.pgm"
MAX_SPEED = 4.0  # px/frame, keeps synthetic motion inside the sampling range


@dataclass
class FrameSequence:
    frames: np.ndarray  # (length, h, w) float32 in [0, 1]
    source: str
    eight_bit: bool = True

    def __len__(self):
        return self.frames.shape[0]


@dataclass
class Clip:
    inputs: np.ndarray  # (N, crop_h, crop_w)
    target: np.ndarray  # (crop_h, crop_w)
    origin: tuple[int, int]
    start: int


def _read_tokens(data, count):
    """First `count` whitespace-separated header tokens, skipping # comments.
    Returns (tokens, offset of the byte after the final single whitespace)."""
    tokens = []
    i = 0
    while len(tokens) < count:
        if i >= len(data):
            raise ValueError("truncated header")
        ch = data[i : i + 1]
        if ch == b"#":
            while i < len(data) and data[i : i + 1] not in (b"\n", b"\r"):
                i += 1
        elif ch.isspace():
            i += 1
        else:
            j = i
            while j < len(data) and not data[j : j + 1].isspace() and data[j : j + 1] != b"#":
                j += 1
            tokens.append(data[i:j])
            i = j
    return tokens, i + 1  # exactly one whitespace byte separates header and raster


def read_image(path):
    """Read a binary PGM/PPM file to a gray float array in [0, 1]."""
    path = Path(path)
    data = path.read_bytes()
    try:
        tokens, offset = _read_tokens(data, 4)
        magic, width, height, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
        if magic not in (b"P5", b"P6"):
            raise ValueError(f"unsupported magic {magic!r} (binary P5/P6 only)")
        if not 0 < maxval < 256:
            raise ValueError(f"unsupported maxval {maxval} (8-bit only)")
        channels = 1 if magic == b"P5" else 3
        need = width * height * channels
        raster = data[offset : offset + need]
        if len(raster) < need:
            raise ValueError(f"raster truncated: expected {need} bytes, found {len(raster)}")
        pixels = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, channels).astype(np.int64)
    except ValueError as e:
        raise ValueError(f"{path}: {e}") from None
    if channels == 3:
        gray = (299 * pixels[:, :, 0] + 587 * pixels[:, :, 1] + 114 * pixels[:, :, 2]) / 1000.0
    else:
        gray = pixels[:, :, 0].astype(np.float64)
    return (gray / maxval).astype(np.float32)


def write_pgm(path, frame):
    """Write a [0, 1] float frame as 8-bit binary PGM (rounded)."""
    frame = np.asarray(frame)
    if frame.ndim != 2:
        raise ValueError(f"write_pgm expects a 2-d frame, got {frame.shape}")
    pixels = np.clip(np.rint(frame * 255.0), 0, 255).astype(np.uint8)
    h, w = pixels.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode())
        f.write(pixels.tobytes())


def load_sequence(directory) -> FrameSequence:
    """Read all PGM/PPM frames of a directory in lexicographic order."""
    directory = Path(directory)
    files = sorted(p for p in directory.iterdir() if p.suffix.lower() in (".pgm", ".ppm"))
    if not files:
        raise ValueError(f"{directory}: no .pgm/.ppm frames found")
    frames = []
    for p in files:
        frame = read_image(p)
        if frames and frame.shape != frames[0].shape:
            raise ValueError(f"{p}: frame size {frame.shape} differs from first frame {frames[0].shape}")
        frames.append(frame)
    return FrameSequence(frames=np.stack(frames), source=str(directory))


def sample_clip(seq: FrameSequence, crop, rng, n_inputs=4) -> Clip:
    """N+1 consecutive frames cropped at one shared random origin."""
    need = n_inputs + 1
    length, h, w = seq.frames.shape
    if length < need:
        raise ValueError(f"{seq.source}: {length} frames cannot yield a {need}-frame clip")
    if crop is None:
        ch, cw = h, w
    elif np.isscalar(crop):
        ch = cw = int(crop)
    else:
        ch, cw = crop
    if ch > h or cw > w:
        raise ValueError(f"crop {ch}x{cw} larger than frame {h}x{w}")
    start = int(rng.integers(0, length - need + 1))
    oy = int(rng.integers(0, h - ch + 1))
    ox = int(rng.integers(0, w - cw + 1))
    window = seq.frames[start : start + need, oy : oy + ch, ox : ox + cw]
    return Clip(inputs=window[:n_inputs].copy(), target=window[n_inputs].copy(), origin=(oy, ox), start=start)


@dataclass(frozen=True)
class SyntheticSpec:
    kind: str  # noise | checker | gradient
    velocity: tuple[float, float]  # (vy, vx) px/frame
    length: int
    size: tuple[int, int]
    seed: int

    def validate(self):
        if self.kind not in ("noise", "checker", "gradient"):
            raise ValueError(f"unknown pattern kind {self.kind!r}")
        if max(abs(self.velocity[0]), abs(self.velocity[1])) > MAX_SPEED:
            raise ValueError(f"|velocity| must be <= {MAX_SPEED} px/frame")
        if self.length < 1 or min(self.size) < 1:
            raise ValueError("length and size must be positive")
        return self


def _box_blur(img, passes=2):
    for _ in range(passes):
        padded = np.pad(img, 1, mode="edge")
        img = (
            padded[:-2, 1:-1] + padded[2:, 1:-1] + padded[1:-1, :-2] + padded[1:-1, 2:] + 2.0 * img
        ) / 6.0
    return img


def _base_pattern(spec: SyntheticSpec, rng):
    h, w = spec.size
    if spec.kind == "noise":
        img = _box_blur(rng.uniform(0.0, 1.0, size=(h, w)))
        lo, hi = img.min(), img.max()
        return 0.1 + 0.8 * (img - lo) / max(hi - lo, 1e-9)
    if spec.kind == "checker":
        cell = 4
        yy, xx = np.meshgrid(np.arange(h) // cell, np.arange(w) // cell, indexing="ij")
        return np.where((yy + xx) % 2 == 0, 0.25, 0.75)
    # gradient: a random affine ramp, exactly reproduced by bilinear resampling
    ang = rng.uniform(0.0, 2.0 * np.pi)
    gy, gx = np.sin(ang), np.cos(ang)
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    ramp = gy * yy + gx * xx
    lo, hi = ramp.min(), ramp.max()
    return 0.1 + 0.8 * (ramp - lo) / max(hi - lo, 1e-9)


def translate_bilinear(frame, dy, dx):
    """Shift content by (+dy, +dx) pixels, bilinear, zero outside the frame."""
    frame = np.asarray(frame, dtype=np.float64)
    h, w = frame.shape
    sy = np.arange(h, dtype=np.float64)[:, None] - dy
    sx = np.arange(w, dtype=np.float64)[None, :] - dx
    y0 = np.floor(sy).astype(np.int64)
    x0 = np.floor(sx).astype(np.int64)
    fy = sy - y0
    fx = sx - x0
    out = np.zeros((h, w), dtype=np.float64)
    for cy, cx, wgt in (
        (0, 0, (1 - fy) * (1 - fx)),
        (0, 1, (1 - fy) * fx),
        (1, 0, fy * (1 - fx)),
        (1, 1, fy * fx),
    ):
        yi = y0 + cy
        xi = x0 + cx
        valid = (yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)
        vals = frame[np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)]
        out += wgt * np.where(valid, vals, 0.0)
    return out


def generate_synthetic(spec: SyntheticSpec) -> FrameSequence:
    """Frame k is the base pattern translated by k * velocity.

    Every frame is rendered from the base (never from the previous frame)
    so interpolation blur does not compound.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    base = _base_pattern(spec, rng)
    vy, vx = spec.velocity
    frames = [translate_bilinear(base, k * vy, k * vx).astype(np.float32) for k in range(spec.length)]
    return FrameSequence(
        frames=np.stack(frames),
        source=f"synthetic:{spec.kind}:v=({vy},{vx}):seed={spec.seed}",
        eight_bit=False,
    )


def write_sequence(directory, seq: FrameSequence, spec: SyntheticSpec | None = None):
    """Write frames in the canonical layout, plus a spec.txt provenance file."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for k in range(len(seq)):
        write_pgm(directory / (FRAME_PATTERN % k), seq.frames[k])
    if spec is not None:
        (directory / "spec.txt").write_text(
            f"kind={spec.kind}\nvelocity={spec.velocity[0]},{spec.velocity[1]}\n"
            f"length={spec.length}\nsize={spec.size[0]},{spec.size[1]}\nseed={spec.seed}\n"
        )


def parse_synthetic_arg(text):
    """Parse the CLI synthetic-corpus description.

    Format: `kind,seqs=16,frames=10,size=48x48,vel=0x1,seed=7`; vel takes
    `VYxVX` (floats) or `random:SPEED` for per-sequence random directions.
    """
    parts = [p.strip() for p in text.split(",") if p.strip()]
    if not parts:
        raise ValueError("empty synthetic spec")
    kind = parts[0]
    opts = {"seqs": 8, "frames": 10, "size": "48x48", "vel": "0x1", "seed": 0}
    for p in parts[1:]:
        m = re.fullmatch(r"(\w+)=(.+)", p)
        if not m or m.group(1) not in opts:
            raise ValueError(f"bad synthetic option {p!r}")
        opts[m.group(1)] = m.group(2)
    h, w = (int(v) for v in str(opts["size"]).lower().split("x"))
    seqs = int(opts["seqs"])
    seed = int(opts["seed"])
    vel = str(opts["vel"])
    specs = []
    rng = np.random.default_rng(seed)
    for i in range(seqs):
        if vel.startswith("random:"):
            speed = float(vel.split(":", 1)[1])
            ang = rng.uniform(0.0, 2.0 * np.pi)
            v = (speed * np.sin(ang), speed * np.cos(ang))
        else:
            vy, vx = (float(t) for t in vel.lower().split("x"))
            v = (vy, vx)
        specs.append(
            SyntheticSpec(kind=kind, velocity=v, length=int(opts["frames"]), size=(h, w), seed=seed + i).validate()
        )
    return specs
