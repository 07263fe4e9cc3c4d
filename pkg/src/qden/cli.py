"""Command-line interface: train, finetune, denoise, eval, verify."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .checkpoint import load_checkpoint, save_checkpoint
from .metrics import psnr, ssim
from .network import NetworkConfig
from .pgm import read_pgm, write_pgm
from .training import (
    FINETUNE_SCHEDULE,
    FineTuneConfig,
    TrainConfig,
    fine_tune,
    recommended_finetune,
    supervised_train,
    write_finetune_csv,
    write_supervised_csv,
)
from .verification import format_report, run_suite

_SCHEDULE_HELP = "; ".join(
    f"sigma {int(s)}: lambda={lam:g}, epochs={ep}"
    for s, (lam, ep) in sorted(FINETUNE_SCHEDULE.items())
)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qden",
        description="Adaptive grayscale denoising with masked-convolution "
                    "polynomial pixel mappings.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser(
        "train", help="supervised training on a directory of PGM images",
        description="Trains on clean PGMs with synthetic Gaussian noise; "
                    "the last --val-count images (sorted by name) are held "
                    "out for validation. Default learning rate 0.001, halved "
                    "at each third of the run.",
    )
    p.add_argument("--data", required=True, help="directory of clean .pgm images")
    p.add_argument("--out", required=True, help="output checkpoint path")
    noise = p.add_mutually_exclusive_group()
    noise.add_argument("--sigma", type=float, default=25.0,
                       help="fixed training noise std in 0-255 units (default 25)")
    noise.add_argument("--blind", metavar="LO:HI",
                       help="draw a fresh sigma per patch, uniform in LO:HI "
                            "(canonical range 0:55)")
    p.add_argument("--depth", type=int, default=4, help="masked conv layers (default 4)")
    p.add_argument("--width", type=int, default=16, help="channels per conv (default 16)")
    p.add_argument("--degree", type=int, default=2, choices=(1, 2),
                   help="polynomial mapping degree (default 2)")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--patch-size", type=int, default=40)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--patches", type=int, default=400,
                   help="total patches sampled from the training images")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--val-count", type=int, default=2,
                   help="images held out for validation (default 2)")
    p.add_argument("--metrics", help="write per-epoch CSV (epoch,loss,val_psnr)")

    p = sub.add_parser(
        "finetune", help="adapt a checkpoint to one noisy image",
        description="Minimizes the flip-averaged estimated loss plus an "
                    "anchor penalty, starting from the checkpoint. Default "
                    "learning rate 0.0003, no decay. When --lambda/--epochs "
                    f"are omitted they follow the per-sigma schedule: "
                    f"{_SCHEDULE_HELP} (nearest sigma wins).")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True, help="noisy input .pgm")
    p.add_argument("--sigma", type=float, required=True,
                   help="noise std of the image, 0-255 units")
    p.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="anchor penalty strength (default: per-sigma schedule)")
    p.add_argument("--epochs", type=int, default=None,
                   help="fine-tuning steps (default: per-sigma schedule)")
    p.add_argument("--lr", type=float, default=3e-4)
    p.add_argument("--no-augment", action="store_true",
                   help="fine-tune on the single image instead of its 4 flips")
    p.add_argument("--clean", help="optional clean .pgm, used for MSE logging only")
    p.add_argument("--metrics", help="write per-epoch CSV (epoch,est_loss,mse)")
    p.add_argument("--out", required=True, help="output checkpoint path")

    p = sub.add_parser("denoise", help="denoise a PGM image with a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True, help="noisy input .pgm")
    p.add_argument("--out", required=True, help="output .pgm path")
    p.add_argument("--flip-average", action="store_true",
                   help="average the denoised 4-flip variants (recommended "
                        "for fine-tuned checkpoints)")

    p = sub.add_parser("eval", help="PSNR/SSIM between two PGM images")
    p.add_argument("--clean", required=True)
    p.add_argument("--denoised", required=True)

    p = sub.add_parser("verify", help="run the verification suites")
    p.add_argument("--suite", default="all",
                   choices=("moments", "unbiasedness", "independence", "rf", "all"))
    p.add_argument("--seed", type=int, default=0)
    return parser


def _parse_blind_range(text: str) -> tuple:
    try:
        lo, hi = text.split(":")
        return float(lo), float(hi)
    except ValueError:
        raise ValueError(f"--blind expects LO:HI, got {text!r}") from None


def _cmd_train(args) -> int:
    data_dir = Path(args.data)
    paths = sorted(data_dir.glob("*.pgm"))
    if len(paths) < args.val_count + 1:
        raise ValueError(
            f"need at least {args.val_count + 1} .pgm images in {data_dir}, "
            f"found {len(paths)}"
        )
    images = [read_pgm(p) for p in paths]
    split = len(images) - args.val_count
    train_imgs, val_imgs = images[:split], images[split:]

    blind = args.blind is not None
    sigma_range = _parse_blind_range(args.blind) if blind else (0.0, 55.0)
    netcfg = NetworkConfig(depth=args.depth, width=args.width, degree=args.degree)
    cfg = TrainConfig(
        patch_size=args.patch_size, patches_total=args.patches,
        batch_size=args.batch_size, epochs=args.epochs, lr=args.lr,
        blind=blind, sigma=args.sigma, sigma_range=sigma_range, seed=args.seed,
    )
    params, metrics = supervised_train(train_imgs, val_imgs, netcfg, cfg)
    save_checkpoint(params, args.out)
    if args.metrics:
        write_supervised_csv(args.metrics, metrics)
    if metrics:
        best = max(m.val_psnr for m in metrics)
        print(f"trained {args.epochs} epochs; best val PSNR {best:.3f} dB; "
              f"checkpoint written to {args.out}")
    else:
        print(f"checkpoint written to {args.out}")
    return 0


def _cmd_finetune(args) -> int:
    params = load_checkpoint(args.ckpt)
    z = read_pgm(args.image)
    clean = read_pgm(args.clean) if args.clean else None
    lam_default, epochs_default = recommended_finetune(args.sigma)
    cfg = FineTuneConfig(
        sigma=args.sigma,
        lam=args.lam if args.lam is not None else lam_default,
        epochs=args.epochs if args.epochs is not None else epochs_default,
        lr=args.lr,
        use_augmentation=not args.no_augment,
    )
    tuned, metrics = fine_tune(params, z, cfg, clean=clean)
    save_checkpoint(tuned, args.out)
    if args.metrics:
        write_finetune_csv(args.metrics, metrics)
    last = metrics[-1].est_loss if metrics else float("nan")
    print(f"fine-tuned {cfg.epochs} epochs (lambda={cfg.lam:g}); "
          f"final estimated loss {last:.6g}; checkpoint written to {args.out}")
    return 0


def _cmd_denoise(args) -> int:
    params = load_checkpoint(args.ckpt)
    z = read_pgm(args.image)
    mode = "flip_averaged" if args.flip_average else "plain"
    from .denoiser import denoise

    out = denoise(params, z, mode=mode)
    write_pgm(out, args.out)
    print(f"denoised image written to {args.out}")
    return 0


def _cmd_eval(args) -> int:
    clean = read_pgm(args.clean)
    denoised = read_pgm(args.denoised)
    print(f"PSNR={psnr(clean, denoised):.3f}dB SSIM={ssim(clean, denoised):.4f}")
    return 0


def _cmd_verify(args) -> int:
    checks = run_suite(args.suite, seed=args.seed)
    print(format_report(checks))
    return 0 if all(c.passed for c in checks) else 1


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "train": _cmd_train,
        "finetune": _cmd_finetune,
        "denoise": _cmd_denoise,
        "eval": _cmd_eval,
        "verify": _cmd_verify,
    }
    try:
        return handlers[args.command](args)
    except Exception as exc:  # runtime failures exit 1, with the reason
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
