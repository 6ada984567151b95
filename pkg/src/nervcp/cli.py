"""Command-line driver: nervcp <subcommand>.

Subcommands mirror the cipher vocabulary: ``encrypt`` overfits the video
network through the key path, ``decrypt`` renders frames from a model
file, ``train-key`` pretrains and saves a reusable key module. Every run
writes a ``run.json`` with the resolved config, seed, and versions so it
can be replayed.
"""

from __future__ import annotations

import argparse
import json
import os
import platform
import sys

import numpy as np
import torch

from . import __version__
from .analysis import NoiseSpec, analyze_frame, keyless_report, noise_attack
from .compression import (
    compression_report,
    finetune_pruned,
    prune_global,
    quantize_model,
)
from .errors import (
    ConfigError,
    ConfigMismatch,
    InvalidCount,
    MissingInput,
    NervcpError,
    OutOfRangeTimestamp,
    ShapeMismatch,
    UsageError,
)
from .frame_io import FrameSequence, load_frames, normalize_timestamps, save_frames, to_grayscale
from .key import (
    MODE_FAE,
    MODE_LAE,
    PEConfig,
    load_key,
    pretrain_key,
    save_key,
)
from .model import ModelConfig, build_model, load_model, save_model
from .training import TrainConfig, decode_with_key, quality_metrics, train_video
from .analysis import decrypt_without_key

_VALIDATION_ERRORS = (
    UsageError,
    ConfigError,
    ConfigMismatch,
    InvalidCount,
    MissingInput,
    OutOfRangeTimestamp,
    ShapeMismatch,
    ValueError,
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{message}\n{self.format_usage()}")


def _write_run_record(out_dir: str, command: str, args: argparse.Namespace) -> None:
    os.makedirs(out_dir, exist_ok=True)
    record = {
        "command": command,
        "config": {k: v for k, v in vars(args).items() if k != "func"},
        "seed": getattr(args, "seed", None),
        "versions": {
            "nervcp": __version__,
            "torch": torch.__version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
    }
    with open(os.path.join(out_dir, "run.json"), "w") as fh:
        json.dump(record, fh, indent=2, default=str)


def _parse_ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(","))
    except ValueError as exc:
        raise UsageError(f"expected comma-separated integers, got {text!r}") from exc


def _parse_grid(text: str) -> tuple[int, int]:
    parts = text.lower().split("x")
    if len(parts) != 2:
        raise UsageError(f"expected HxW, got {text!r}")
    return int(parts[0]), int(parts[1])


def _pe_config(args) -> PEConfig:
    if args.embedding_length % 2 != 0 or args.embedding_length < 2:
        raise ConfigError(f"embedding length must be even and >= 2, got {args.embedding_length}")
    return PEConfig(b=args.pe_base, l=args.embedding_length // 2)


def _save_frames_array(frames: np.ndarray, out_dir: str) -> list[str]:
    seq = FrameSequence(frames=frames.astype(np.float32), timestamps=normalize_timestamps(len(frames)))
    return save_frames(seq, out_dir)


def _cmd_train_key(args) -> int:
    cfg = _pe_config(args)
    timestamps = normalize_timestamps(args.frames)
    key, history = pretrain_key(cfg, timestamps, epochs=args.epochs, lr=args.lr, seed=args.seed)
    _write_run_record(args.out, "train-key", args)
    save_key(key, os.path.join(args.out, "key.nvkey"))
    print(f"key written to {os.path.join(args.out, 'key.nvkey')}")
    if history:
        print(f"pretraining loss: {history[0]:.6f} -> {history[-1]:.6f}")
    return 0


def _cmd_encrypt(args) -> int:
    key = load_key(args.key)
    config = ModelConfig(
        c1=args.c1,
        c2=args.c2,
        upscale_factors=_parse_ints(args.factors),
        base_grid=_parse_grid(args.base_grid),
        min_channels=args.min_channels,
        pe=key.cfg,
        mlp_hidden=args.mlp_hidden,
    )
    frames = load_frames(args.input, target_resolution=config.target_resolution)
    model = build_model(config, seed=args.seed)
    cfg = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=args.lr,
        alpha=args.alpha,
        seed=args.seed,
        key_mode=args.key_mode,
        checkpoint_every=args.checkpoint_every,
    )
    _write_run_record(args.out, "encrypt", args)
    model, history = train_video(frames, key, model, cfg, out_dir=args.out)
    model_path = os.path.join(args.out, "model.nvcp")
    save_model(model, model_path)
    if cfg.key_mode == MODE_LAE:
        save_key(key, os.path.join(args.out, "key.nvkey"))
    decoded = decode_with_key(model, key, frames.timestamps).numpy()
    reports = [quality_metrics(p, g) for p, g in zip(decoded, frames.frames)]
    mean_psnr = float(np.mean([r.psnr for r in reports]))
    print(f"model written to {model_path} ({model.parameter_count} parameters)")
    if history:
        print(f"loss: {history[0]:.6f} -> {history[-1]:.6f}; keyed PSNR {mean_psnr:.2f} dB")
    return 0


def _cmd_decrypt(args) -> int:
    model = load_model(args.model)
    if args.t:
        timestamps = np.asarray(args.t, dtype=np.float64)
    elif args.frames:
        timestamps = normalize_timestamps(args.frames)
    else:
        raise UsageError("decrypt needs --t or --frames")
    _write_run_record(args.out, "decrypt", args)
    if args.keyless:
        decoded = np.stack([decrypt_without_key(model, float(t)).numpy() for t in timestamps])
    else:
        if not args.key:
            raise UsageError("decrypt needs --key unless --keyless is set")
        key = load_key(args.key)
        decoded = decode_with_key(model, key, timestamps).numpy()
    paths = _save_frames_array(decoded, args.out)
    print(f"wrote {len(paths)} frame(s) to {args.out}")
    return 0


def _cmd_prune(args) -> int:
    model = load_model(args.model)
    pruned, spec = prune_global(model, args.sparsity)
    _write_run_record(args.out, "prune", args)
    if args.finetune_epochs > 0:
        if not (args.input and args.key):
            raise UsageError("fine-tuning needs --input and --key")
        key = load_key(args.key)
        frames = load_frames(args.input, target_resolution=model.config.target_resolution)
        cfg = TrainConfig(epochs=args.finetune_epochs, lr=args.lr, alpha=args.alpha, seed=args.seed)
        pruned, _ = finetune_pruned(pruned, spec, frames, key, cfg)
    out_path = os.path.join(args.out, "model_pruned.nvcp")
    save_model(pruned, out_path)
    zeros = sum(int((p == 0).sum()) for p in pruned.state_dict().values())
    print(f"pruned model written to {out_path} (threshold {spec.threshold:.6g}, {zeros} zeros)")
    return 0


def _cmd_quantize(args) -> int:
    model = load_model(args.model)
    quantized = quantize_model(model, args.bit)
    _write_run_record(args.out, "quantize", args)
    out_path = os.path.join(args.out, "model_quantized.nvcp")
    save_model(model, out_path, quantized=quantized)
    if args.pixels:
        print(compression_report(model, sparsity=1.0, qb=args.bit, n_pixel=args.pixels).to_json())
    print(f"quantized model written to {out_path}")
    return 0


def _cmd_analyze(args) -> int:
    if args.model:
        model = load_model(args.model)
        t = args.t if args.t else [0.5]
        frame = decrypt_without_key(model, float(t[0])).numpy()
        gray = to_grayscale(frame)
    else:
        if not args.input:
            raise UsageError("analyze needs --input or --model")
        frames = load_frames(args.input)
        gray = to_grayscale(frames.frames[args.frame_index])
    report = analyze_frame(gray, n_pairs=args.pairs, seed=args.seed)
    _write_run_record(args.out, "analyze", args)
    report_path = os.path.join(args.out, "analysis.json")
    with open(report_path, "w") as fh:
        fh.write(report.to_json())
    if args.plots:
        _write_plots(gray, report, args.out)
    print(
        f"correlation h/v/d = {report.horizontal:.4f}/{report.vertical:.4f}/"
        f"{report.diagonal:.4f}, entropy = {report.entropy:.3f} bits"
    )
    print(f"report written to {report_path}")
    return 0


def _write_plots(gray, report, out_dir) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, 4, figsize=(16, 4))
    axes[0].bar(np.arange(256), np.bincount(gray.ravel(), minlength=256), width=1.0)
    axes[0].set_title("histogram")
    for ax, direction in zip(axes[1:], ("horizontal", "vertical", "diagonal")):
        pairs = np.asarray(report.pair_samples[direction])
        ax.scatter(pairs[:, 0], pairs[:, 1], s=2)
        ax.set_title(f"{direction} pairs")
    fig.tight_layout()
    fig.savefig(os.path.join(out_dir, "analysis.png"), dpi=120)
    plt.close(fig)


def _cmd_attack(args) -> int:
    model = load_model(args.model)
    frames = load_frames(args.input, target_resolution=model.config.target_resolution)
    specs = []
    for kind in args.kinds.split(","):
        kind = kind.strip()
        if kind == "truncated_normal":
            for sigma in _parse_floats(args.sigmas):
                specs.append(NoiseSpec(kind=kind, param=sigma, seed=args.seed))
        else:
            specs.append(NoiseSpec(kind=kind, seed=args.seed))
    results = {}
    for spec in specs:
        label = spec.kind if spec.kind != "truncated_normal" else f"truncated_normal({spec.param})"
        report = noise_attack(model, frames, spec)
        results[label] = {"psnr": report.psnr, "ssim": report.ssim, "ms_ssim": report.ms_ssim}
        print(f"{label}: PSNR {report.psnr:.2f} dB, MS-SSIM {report.ms_ssim:.4f}")
    keyless = keyless_report(model, frames)
    results["keyless"] = {"psnr": keyless.psnr, "ssim": keyless.ssim, "ms_ssim": keyless.ms_ssim}
    _write_run_record(args.out, "attack", args)
    with open(os.path.join(args.out, "attack_report.json"), "w") as fh:
        json.dump(results, fh, indent=2)
    return 0


def _parse_floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",")]
    except ValueError as exc:
        raise UsageError(f"expected comma-separated floats, got {text!r}") from exc


def _cmd_metrics(args) -> int:
    pred = load_frames(args.pred)
    gt = load_frames(args.gt)
    if pred.frames.shape != gt.frames.shape:
        raise ShapeMismatch("prediction and ground-truth videos differ in shape")
    reports = [quality_metrics(p, g) for p, g in zip(pred.frames, gt.frames)]
    summary = {
        "psnr": float(np.mean([r.psnr for r in reports])),
        "ssim": float(np.mean([r.ssim for r in reports])),
        "ms_ssim": float(np.mean([r.ms_ssim for r in reports])),
        "per_frame": [vars(r) for r in reports],
    }
    _write_run_record(args.out, "metrics", args)
    with open(os.path.join(args.out, "metrics.json"), "w") as fh:
        json.dump(summary, fh, indent=2)
    print(f"mean PSNR {summary['psnr']:.2f} dB, MS-SSIM {summary['ms_ssim']:.4f}")
    return 0


def _cmd_bpp(args) -> int:
    from .compression import bpp

    value = bpp(args.params, args.sparsity, args.qb, args.pixels)
    print(f"{value:.6f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nervcp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("train-key", help="pretrain and save a key module")
    p.add_argument("--embedding-length", type=int, default=160)
    p.add_argument("--pe-base", type=float, default=1.25)
    p.add_argument("--frames", type=int, default=8, help="timestamp grid size")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train_key)

    p = sub.add_parser("encrypt", help="overfit the video network through the key")
    p.add_argument("--input", required=True)
    p.add_argument("--key", required=True)
    p.add_argument("--c1", type=int, default=26)
    p.add_argument("--c2", type=int, default=26)
    p.add_argument("--factors", default="5,2,2,2,2")
    p.add_argument("--base-grid", default="9x16")
    p.add_argument("--min-channels", type=int, default=96)
    p.add_argument("--mlp-hidden", type=int, default=512)
    p.add_argument("--epochs", type=int, default=2400)
    p.add_argument("--batch-size", type=int, default=1)
    p.add_argument("--lr", type=float, default=5e-4)
    p.add_argument("--alpha", type=float, default=0.7)
    p.add_argument("--key-mode", choices=[MODE_FAE, MODE_LAE], default=MODE_FAE)
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_encrypt)

    p = sub.add_parser("decrypt", help="render frames from a model file")
    p.add_argument("--model", required=True)
    p.add_argument("--key")
    p.add_argument("--keyless", action="store_true")
    p.add_argument("--t", type=float, action="append")
    p.add_argument("--frames", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_decrypt)

    p = sub.add_parser("prune", help="global magnitude pruning (optional fine-tune)")
    p.add_argument("--model", required=True)
    p.add_argument("--sparsity", type=float, required=True)
    p.add_argument("--finetune-epochs", type=int, default=0)
    p.add_argument("--input")
    p.add_argument("--key")
    p.add_argument("--lr", type=float, default=5e-4)
    p.add_argument("--alpha", type=float, default=0.7)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_prune)

    p = sub.add_parser("quantize", help="post-hoc min-max quantization")
    p.add_argument("--model", required=True)
    p.add_argument("--bit", type=int, default=8)
    p.add_argument("--pixels", type=int, help="pixel count for a BPP report")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_quantize)

    p = sub.add_parser("analyze", help="pixel statistics of a plain or decoded frame")
    p.add_argument("--input")
    p.add_argument("--model")
    p.add_argument("--t", type=float, action="append")
    p.add_argument("--frame-index", type=int, default=0)
    p.add_argument("--pairs", type=int, default=600)
    p.add_argument("--plots", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("attack", help="noise-substitution attacks on a model")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--kinds", default="gaussian,uniform,bernoulli,truncated_normal")
    p.add_argument("--sigmas", default="0.05,0.1,0.15,0.2,0.25")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_attack)

    p = sub.add_parser("metrics", help="PSNR/SSIM/MS-SSIM between two frame dirs")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_metrics)

    p = sub.add_parser("bpp", help="bits-per-pixel of a transmitted model")
    p.add_argument("--params", type=int, required=True)
    p.add_argument("--sparsity", type=float, required=True)
    p.add_argument("--qb", type=int, required=True)
    p.add_argument("--pixels", type=int, required=True)
    p.set_defaults(func=_cmd_bpp)

    return parser


def run(argv=None) -> int:
    threads = os.environ.get("NERVCP_THREADS")
    if threads:
        torch.set_num_threads(max(1, int(threads)))
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NervcpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())
