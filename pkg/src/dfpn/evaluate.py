"""PSNR metric, whole-sequence prediction protocol, and checkpoint I/O.

PSNR is computed on de-normalised, rounded 8-bit intensities so reported
numbers line up with the usual convention for 8-bit video. Identical
frames (zero MSE) report the 99.0 dB sentinel to keep reports numeric.

Checkpoint format (binary, little-endian, platform independent):

  magic    b"DFPN"
  u32      format version (currently 1)
  u32 + bytes   model config as UTF-8 JSON
  parameter table: u32 count, then per entry
      u16 + bytes  name
      u8           rank, then u32 dims
      raw float32 values, row-major
  u8       1 if a training state follows, else 0
  state    u64 iteration, f64 base learning rate, u64 halving period,
           then first- and second-moment tables (same table format)
  u32      CRC-32 of everything before it

Loading validates magic, version, checksum, and that the parameter names
exactly match the embedded config's canonical name set.
"""

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from dfpn.data import FrameSequence
from dfpn.model import ModelConfig, dfpn_forward, parameter_shapes

PSNR_CAP_DB = 99.0
CHECKPOINT_MAGIC = b"DFPN"
CHECKPOINT_VERSION = 1


class CheckpointError(Exception):
    pass


def to_uint8(frame):
    """De-normalise a [0, 1] float frame to rounded 8-bit intensities."""
    return np.clip(np.rint(np.asarray(frame, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def psnr(pred, gt) -> float:
    """10*log10(255^2 / MSE) on rounded 8-bit values; 99.0 dB when identical."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"psnr: shape mismatch {pred.shape} vs {gt.shape}")
    a = to_uint8(pred).astype(np.float64)
    b = to_uint8(gt).astype(np.float64)
    mse = float(((a - b) ** 2).mean())
    if mse == 0.0:
        return PSNR_CAP_DB
    return float(10.0 * np.log10(255.0**2 / mse))


@dataclass
class EvalReport:
    rows: list[tuple[int, float, float]]  # (frame index, psnr dB, baseline psnr dB)
    mean_psnr: float
    mean_baseline_psnr: float
    capped_frames: list[int] = field(default_factory=list)


def _mean_uncapped(values):
    keep = [v for v in values if v < PSNR_CAP_DB]
    if not keep:
        return PSNR_CAP_DB
    return float(np.mean(keep))


def run_protocol(seq: FrameSequence, n_inputs: int, predict_fn) -> EvalReport:
    """Predict every frame t in [N, len) from the true previous N frames
    (non-recursive) and compare against the copy-last-frame baseline."""
    if len(seq) <= n_inputs:
        raise ValueError(f"sequence of {len(seq)} frames cannot be evaluated with {n_inputs} inputs")
    rows = []
    capped = []
    for t in range(n_inputs, len(seq)):
        pred = predict_fn(seq.frames[t - n_inputs : t])
        p = psnr(pred, seq.frames[t])
        base = psnr(seq.frames[t - 1], seq.frames[t])
        rows.append((t, p, base))
        if p >= PSNR_CAP_DB:
            capped.append(t)
    return EvalReport(
        rows=rows,
        mean_psnr=_mean_uncapped([r[1] for r in rows]),
        mean_baseline_psnr=_mean_uncapped([r[2] for r in rows]),
        capped_frames=capped,
    )


def model_predictor(cfg: ModelConfig, params):
    """predict_fn closure running the network on one (N, h, w) window."""

    def predict(window):
        frames = np.ascontiguousarray(window[None].astype(np.float32))
        pred, _ = dfpn_forward(frames, params, cfg)
        return pred[0, 0]

    return predict


def predict_sequence(seq: FrameSequence, cfg: ModelConfig, params) -> EvalReport:
    return run_protocol(seq, cfg.n_inputs, model_predictor(cfg, params))


def write_report(path, report: EvalReport):
    with open(path, "w") as f:
        f.write("frame,psnr_db,baseline_psnr_db\n")
        for t, p, b in report.rows:
            f.write(f"{t},{p:.4f},{b:.4f}\n")


# --- checkpoint serialisation -------------------------------------------------


def _pack_table(table):
    out = [struct.pack("<I", len(table))]
    for name, arr in table.items():
        arr32 = np.ascontiguousarray(arr, dtype=np.float32)
        enc = name.encode()
        out.append(struct.pack("<H", len(enc)))
        out.append(enc)
        out.append(struct.pack("<B", arr32.ndim))
        out.append(struct.pack(f"<{arr32.ndim}I", *arr32.shape))
        out.append(arr32.astype("<f4").tobytes())
    return b"".join(out)


class _Reader:
    def __init__(self, data, path):
        self.data = data
        self.path = path
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise CheckpointError(f"{self.path}: truncated checkpoint")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _read_table(r: _Reader):
    (count,) = r.unpack("<I")
    table = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode()
        (ndim,) = r.unpack("<B")
        dims = r.unpack(f"<{ndim}I")
        n_values = int(np.prod(dims)) if ndim else 1
        raw = r.take(4 * n_values)
        table[name] = np.frombuffer(raw, dtype="<f4").reshape(dims).astype(np.float32)
    return table


def save_checkpoint(path, cfg: ModelConfig, params, state=None):
    """Serialise config + parameters (+ optional training state), bit-exact."""
    body = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION)]
    cfg_json = json.dumps(cfg.to_dict(), sort_keys=True).encode()
    body.append(struct.pack("<I", len(cfg_json)))
    body.append(cfg_json)
    body.append(_pack_table(params))
    if state is None:
        body.append(struct.pack("<B", 0))
    else:
        body.append(struct.pack("<B", 1))
        body.append(struct.pack("<QdQ", state.t, state.base_lr, state.halve_every))
        body.append(_pack_table(state.m))
        body.append(_pack_table(state.v))
    blob = b"".join(body)
    blob += struct.pack("<I", zlib.crc32(blob) & 0xFFFFFFFF)
    Path(path).write_bytes(blob)


def load_checkpoint(path):
    """Returns (cfg, params, state-or-None); validates integrity and names."""
    from dfpn.optim import TrainState

    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"{path}: {e}") from None
    if len(data) < 12 or data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a DFPN checkpoint (bad magic)")
    (stored_crc,) = struct.unpack("<I", data[-4:])
    if zlib.crc32(data[:-4]) & 0xFFFFFFFF != stored_crc:
        raise CheckpointError(f"{path}: checksum mismatch, file is corrupt")
    r = _Reader(data[:-4], path)
    r.take(4)
    (version,) = r.unpack("<I")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: format version {version} is not supported (expected {CHECKPOINT_VERSION})")
    (cfg_len,) = r.unpack("<I")
    try:
        cfg = ModelConfig.from_dict(json.loads(r.take(cfg_len).decode()))
    except (ValueError, TypeError) as e:
        raise CheckpointError(f"{path}: bad embedded config: {e}") from None
    params = _read_table(r)
    expected = parameter_shapes(cfg)
    missing = sorted(set(expected) - set(params))
    extra = sorted(set(params) - set(expected))
    if missing or extra:
        raise CheckpointError(
            f"{path}: parameter names do not match the config (missing: {missing or 'none'}, extra: {extra or 'none'})"
        )
    for name, shape in expected.items():
        if params[name].shape != shape:
            raise CheckpointError(f"{path}: parameter {name} has shape {params[name].shape}, expected {shape}")
    (has_state,) = r.unpack("<B")
    state = None
    if has_state:
        t, base_lr, halve_every = r.unpack("<QdQ")
        m = _read_table(r)
        v = _read_table(r)
        state = TrainState(m=m, v=v, t=int(t), base_lr=float(base_lr), halve_every=int(halve_every))
    return cfg, params, state
