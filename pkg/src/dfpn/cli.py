"""Command-line interface.

Subcommands: train, predict, eval, gradcheck, info, bench. All commands
exit 0 on success, 2 on usage errors, and 1 with a one-line diagnostic on
runtime failures.
"""

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from dfpn import backend
from dfpn.data import generate_synthetic, load_sequence, parse_synthetic_arg, read_image, write_pgm
from dfpn.evaluate import load_checkpoint, predict_sequence, save_checkpoint, write_report
from dfpn.model import ModelConfig, count_parameters, dfpn_forward, init_parameters, parameter_shapes


def _load_config(path):
    if path is None:
        return ModelConfig()
    with open(path) as f:
        return ModelConfig.from_dict(json.load(f))


def _cmd_train(args):
    cfg = _load_config(args.config)
    if args.synthetic:
        dataset = [generate_synthetic(s) for s in parse_synthetic_arg(args.synthetic)]
    else:
        base = Path(args.data_dir)
        seq_dirs = sorted(d for d in base.iterdir() if d.is_dir()) or [base]
        dataset = [load_sequence(d) for d in seq_dirs]
    from dfpn.optim import train_loop

    crop = args.crop
    min_h = min(s.frames.shape[1] for s in dataset)
    min_w = min(s.frames.shape[2] for s in dataset)
    if crop is None:
        crop = min(96, min_h, min_w)
    result = train_loop(
        dataset,
        cfg,
        iters=args.iters,
        batch_size=args.batch,
        seed=args.seed,
        checkpoint_every=args.checkpoint_every,
        base_lr=args.lr,
        crop=crop,
        out_path=args.out,
        log_path=args.log,
    )
    tail = result.losses[-min(50, len(result.losses)) :]
    print(f"trained {args.iters} iterations; final-50 mean loss {np.mean(tail):.6f}; checkpoint: {args.out}")
    return 0


def _cmd_predict(args):
    cfg, params, _ = load_checkpoint(args.checkpoint)
    if len(args.frames) != cfg.n_inputs:
        raise ValueError(f"model wants {cfg.n_inputs} input frames, got {len(args.frames)}")
    frames = [read_image(p) for p in args.frames]
    for p, f in zip(args.frames, frames):
        if f.shape != frames[0].shape:
            raise ValueError(f"{p}: frame size {f.shape} differs from first frame {frames[0].shape}")
    stack = np.stack(frames)[None].astype(np.float32)
    pred, _ = dfpn_forward(stack, params, cfg)
    write_pgm(args.out, np.clip(pred[0, 0], 0.0, 1.0))
    print(f"wrote prediction to {args.out}")
    return 0


def _cmd_eval(args):
    cfg, params, _ = load_checkpoint(args.checkpoint)
    seq = load_sequence(args.seq_dir)
    report = predict_sequence(seq, cfg, params)
    write_report(args.report, report)
    capped = f", {len(report.capped_frames)} capped frames" if report.capped_frames else ""
    print(
        f"{len(report.rows)} frames: mean PSNR {report.mean_psnr:.2f} dB "
        f"(copy-last baseline {report.mean_baseline_psnr:.2f} dB){capped}; report: {args.report}"
    )
    return 0


def _cmd_gradcheck(args):
    from dfpn import gradcheck

    if args.scale == "unit":
        results = gradcheck.unit_suite(seed=args.seed)
        tol = gradcheck.UNIT_TOL
        failed = False
        for name, err in results.items():
            status = "ok" if err < tol else "FAIL"
            print(f"{name:<24} max rel err {err:.3e}  [{status}]")
            failed |= err >= tol
        return 1 if failed else 0
    worst = gradcheck.check_model(seed=args.seed)
    tol = gradcheck.MODEL_TOL
    err = max(worst.values())
    name = max(worst, key=worst.get)
    print(f"full model: worst max rel err {err:.3e} ({name})  [{'ok' if err < tol else 'FAIL'}]")
    return 0 if err < tol else 1


def _cmd_info(args):
    cfg = _load_config(args.config)
    shapes = parameter_shapes(cfg)
    width = max(len(n) for n in shapes)
    for name, shape in shapes.items():
        print(f"{name:<{width}}  {str(shape):<22} {int(np.prod(shape)):>10}")
    print(f"total parameters: {count_parameters(cfg)}")
    return 0


def _cmd_bench(args):
    from dfpn import kernels

    if not backend.HAVE_COMPILED:
        print("compiled backend not built; nothing to compare")
        return 1
    rng = np.random.default_rng(0)
    n, c, h, w = 1, args.channels, args.size, args.size
    x = rng.standard_normal((n, c, h, w)).astype(np.float32)
    wgt = rng.standard_normal((c, c, 3, 3)).astype(np.float32)
    b = rng.standard_normal(c).astype(np.float32)
    off = (rng.standard_normal((n, 18, h, w)) * 1.5).astype(np.float32)
    d_out = rng.standard_normal((n, c, h, w)).astype(np.float32)

    def timeit(fn):
        fn()  # warm up
        best = float("inf")
        for _ in range(args.repeat):
            t0 = time.perf_counter()
            fn()
            best = min(best, time.perf_counter() - t0)
        return best

    import dfpn.backend as be

    results = {}
    saved = be._active
    try:
        for name in ("python", "compiled"):
            be._active = be.primitives(name)
            fwd = timeit(lambda: kernels.deform_conv2d_forward(x, off, wgt, b))
            bwd = timeit(lambda: kernels.deform_conv2d_backward(x, off, wgt, d_out))
            results[name] = (fwd, bwd)
            ref = kernels.deform_conv2d_forward(x, off, wgt, b)
            results[f"{name}_out"] = ref
    finally:
        be._active = saved
    conv = timeit(lambda: kernels.conv2d_forward(x, wgt, b, 1))
    diff = float(np.abs(results["python_out"] - results["compiled_out"]).max())
    print(f"deformable conv {c} ch @ {h}x{w} (best of {args.repeat}):")
    for name in ("python", "compiled"):
        fwd, bwd = results[name]
        print(f"  {name:<9} forward {fwd * 1e3:8.2f} ms   backward {bwd * 1e3:8.2f} ms")
    pf, pb = results["python"]
    cf, cb = results["compiled"]
    print(f"  speedup   forward {pf / cf:7.1f}x    backward {pb / cb:7.1f}x   (max |diff| {diff:.2e})")
    print(f"plain conv (BLAS path, shared by both backends): {conv * 1e3:.2f} ms")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="dfpn", description="Deformable next-frame predictor")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model on frame sequences")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--data-dir", help="directory of sequence directories of frame_%%06d.pgm files")
    src.add_argument("--synthetic", help="synthetic corpus spec, e.g. 'noise,seqs=16,frames=10,size=48x48,vel=0x1,seed=7'")
    p.add_argument("--config", help="model config JSON (defaults to the standard architecture)")
    p.add_argument("--iters", type=int, default=500_000)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--crop", type=int, default=None, help="square crop size (default: min(96, frame size))")
    p.add_argument("--out", required=True, help="final checkpoint path")
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--log", help="loss log CSV path")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("predict", help="predict the next frame from N input frames")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--frames", nargs="+", required=True, help="the N previous frames, oldest first")
    p.add_argument("--out", required=True, help="output PGM path")
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("eval", help="per-frame PSNR over a sequence directory")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--seq-dir", required=True)
    p.add_argument("--report", required=True, help="output CSV path")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference verification of the backward passes")
    p.add_argument("--scale", choices=("unit", "model"), default="unit")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("info", help="parameter table and total count for a config")
    p.add_argument("--config", help="model config JSON")
    p.set_defaults(func=_cmd_info)

    p = sub.add_parser("bench", help="compare compiled vs pure-python sampling kernels")
    p.add_argument("--size", type=int, default=96)
    p.add_argument("--channels", type=int, default=64)
    p.add_argument("--repeat", type=int, default=3)
    p.set_defaults(func=_cmd_bench)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as e:  # one-line diagnostic, nonzero exit
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
