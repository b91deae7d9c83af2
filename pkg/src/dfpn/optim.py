"""Training: mean-L1 objective, Adam, step-halving schedule and the loop.

The objective is the mean absolute error over all prediction entries
(resolution-independent; the sum form is just mean * entry count). Adam
is the standard bias-corrected update; both moments and parameters are
replaced functionally so a step never mutates its inputs.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from dfpn.data import Clip, FrameSequence, sample_clip
from dfpn.model import ModelConfig, dfpn_backward, dfpn_forward, init_parameters

BETA1 = 0.9
BETA2 = 0.999
EPSILON = 1e-8
HALVE_EVERY = 100_000


@dataclass
class LossValue:
    loss: float
    d_prediction: np.ndarray


def l1_loss(pred, gt) -> LossValue:
    """Mean |pred - gt|; the subgradient of |.| at 0 is taken as 0."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"l1_loss: shape mismatch {pred.shape} vs {gt.shape}")
    diff = pred - gt
    loss = float(np.abs(diff).mean())
    grad = np.sign(diff) / diff.size
    return LossValue(loss=loss, d_prediction=grad.astype(pred.dtype))


@dataclass
class TrainState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    base_lr: float = 1e-4
    halve_every: int = HALVE_EVERY

    @classmethod
    def fresh(cls, params, base_lr=1e-4, halve_every=HALVE_EVERY):
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
            t=0,
            base_lr=base_lr,
            halve_every=halve_every,
        )


def lr_at(iteration: int, base_lr: float, halve_every: int = HALVE_EVERY) -> float:
    if iteration < 0:
        raise ValueError("iteration must be >= 0")
    return base_lr * 0.5 ** (iteration // halve_every)


def adam_step(params, grads, state: TrainState, lr, beta1=BETA1, beta2=BETA2, eps=EPSILON):
    """One bias-corrected Adam update; returns (new params, new state)."""
    if set(params) != set(grads) or set(params) != set(state.m):
        missing = set(params) ^ set(grads)
        raise ValueError(f"parameter/gradient name sets differ: {sorted(missing)}")
    t = state.t + 1
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {name} {p.shape}")
        m = beta1 * state.m[name] + (1.0 - beta1) * g
        v = beta2 * state.v[name] + (1.0 - beta2) * (g * g)
        m_hat = m / c1
        v_hat = v / c2
        new_params[name] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_m[name] = m
        new_v[name] = v
    return new_params, TrainState(m=new_m, v=new_v, t=t, base_lr=state.base_lr, halve_every=state.halve_every)


def make_batch(clips) -> tuple[np.ndarray, np.ndarray]:
    """Stack clips into (b, N, h, w) inputs and (b, 1, h, w) ground truth."""
    inputs = np.stack([c.inputs for c in clips]).astype(np.float32)
    gt = np.stack([c.target[None] for c in clips]).astype(np.float32)
    return inputs, gt


def train_step(batch, params, state: TrainState, cfg: ModelConfig):
    """Forward, mean-L1 against the last frame, backward, Adam at the
    scheduled rate. Returns (params', state', loss)."""
    inputs, gt = batch
    if inputs.shape[1] != cfg.n_inputs:
        raise ValueError(f"batch has {inputs.shape[1]} input frames, config wants {cfg.n_inputs}")
    pred, tape = dfpn_forward(inputs, params, cfg)
    lv = l1_loss(pred, gt)
    grads = dfpn_backward(tape, lv.d_prediction)
    lr = lr_at(state.t, state.base_lr, state.halve_every)
    new_params, new_state = adam_step(params, grads, state, lr)
    return new_params, new_state, lv.loss


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    state: TrainState
    losses: list[float] = field(default_factory=list)
    checkpoints: list[str] = field(default_factory=list)


def _draw_clips(dataset, batch_size, crop, n_inputs, rng):
    if isinstance(dataset[0], Clip):
        picks = rng.integers(0, len(dataset), size=batch_size)
        return [dataset[int(i)] for i in picks]
    clips = []
    for _ in range(batch_size):
        seq: FrameSequence = dataset[int(rng.integers(0, len(dataset)))]
        clips.append(sample_clip(seq, crop, rng, n_inputs=n_inputs))
    return clips


def train_loop(
    dataset,
    cfg: ModelConfig,
    iters: int,
    batch_size: int,
    seed: int,
    checkpoint_every: int = 0,
    base_lr: float = 1e-4,
    crop: int | None = 96,
    out_path=None,
    log_path=None,
) -> TrainResult:
    """Seeded training over a list of FrameSequence (fresh random crops per
    batch) or pre-sampled Clip objects (drawn with replacement).

    Writes one `iteration,lr,loss` row per iteration when log_path is set;
    checkpoints go to `<out_path>.iter<NNNNNN>` plus the final out_path.
    """
    from dfpn.evaluate import save_checkpoint

    if not dataset:
        raise ValueError("train_loop: empty dataset")
    init_seq, sample_seq = np.random.SeedSequence(seed).spawn(2)
    params = init_parameters(cfg, init_seq.generate_state(1)[0])
    state = TrainState.fresh(params, base_lr=base_lr)
    rng = np.random.default_rng(sample_seq)

    result = TrainResult(params=params, state=state)
    log_file = open(log_path, "w", newline="") if log_path else None
    try:
        writer = None
        if log_file:
            writer = csv.writer(log_file)
            writer.writerow(["iteration", "lr", "loss"])
        for it in range(iters):
            clips = _draw_clips(dataset, batch_size, crop, cfg.n_inputs, rng)
            params, state, loss = train_step(make_batch(clips), params, state, cfg)
            result.losses.append(loss)
            if writer:
                writer.writerow([it, f"{lr_at(it, base_lr, state.halve_every):.8g}", f"{loss:.8g}"])
            if checkpoint_every and out_path and (it + 1) % checkpoint_every == 0 and (it + 1) < iters:
                path = f"{out_path}.iter{it + 1:06d}"
                save_checkpoint(path, cfg, params, state)
                result.checkpoints.append(path)
    finally:
        if log_file:
            log_file.close()
    result.params = params
    result.state = state
    if out_path:
        save_checkpoint(out_path, cfg, params, state)
        result.checkpoints.append(str(out_path))
    return result
