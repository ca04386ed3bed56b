"""Command line entry point: ``stylenoise <command> [flags]``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np
import torch

from . import analysis, metrics, report
from .core import (
    Checkpoint,
    ModelConfig,
    check_config_match,
    load_checkpoint,
    module_params,
    read_config_file,
    save_checkpoint,
    split_config,
)
from .data import pil_to_tensor, resolve_dataset, save_image
from .decoder import build_decoder
from .losses import proxy_extractor
from .model import Autoencoder, build_encoder
from .trainer import TrainConfig, Trainer, make_denoise_batch

log = logging.getLogger("stylenoise")


def _floats(text: str) -> List[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _load_configs(path: Optional[str]):
    if path is None:
        return ModelConfig(), {}
    return split_config(read_config_file(path))


def _load_model(path) -> Autoencoder:
    ckpt = load_checkpoint(path)
    if not ckpt.has("encoder."):
        raise ValueError(f"{path} holds no trained encoder")
    model = Autoencoder.from_checkpoint(ckpt)
    model.encoder.eval()
    return model


def _pick_image(args, model: Autoencoder, which: str = "image") -> torch.Tensor:
    path = getattr(args, which, None)
    if path is not None:
        from PIL import Image

        with Image.open(path) as img:
            return pil_to_tensor(img, model.config.resolution)
    if args.data is None:
        raise ValueError(f"give --{which.replace('_', '-')} or --data with --index")
    index = getattr(args, "index_b" if which == "image_b" else "index")
    ds = resolve_dataset(args.data, model.config)
    return ds.images[index % len(ds)]


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_init_decoder(args) -> int:
    config, _ = _load_configs(args.config)
    decoder = build_decoder(config, seed=args.seed)
    ckpt = Checkpoint(config, module_params(decoder, "decoder."), {"stage": "decoder", "seed": args.seed})
    save_checkpoint(args.out, ckpt)
    print(f"wrote frozen decoder ({config.decoder_version}, R={config.resolution}) to {args.out}")
    return 0


def cmd_train(args) -> int:
    config, train_values = _load_configs(args.config)
    if args.strategy is not None:
        train_values["strategy"] = args.strategy
    if args.denoise_sigmas is not None:
        train_values["denoise_sigmas"] = _floats(args.denoise_sigmas)
        train_values["denoise_blind"] = not args.per_sigma
    for key in ("iterations", "batch_size", "base_lr", "seed", "lr_split_ratio"):
        value = getattr(args, key)
        if value is not None:
            train_values[key] = value
    cfg = TrainConfig.from_dict(train_values)
    ckpt = load_checkpoint(args.decoder)
    if args.config:
        check_config_match(config, ckpt.config)
    kind = "two_network" if cfg.strategy == "two_network" else "single"
    decoder = build_decoder(ckpt.config, params=ckpt.params)
    model = Autoencoder(build_encoder(ckpt.config, kind, seed=cfg.seed + 1), decoder)
    dataset = resolve_dataset(args.data, ckpt.config)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    log_path = Path(args.log) if args.log else out.with_suffix(".log.csv")
    trainer = Trainer(model, cfg)
    trainer.run(dataset, log_path=log_path, checkpoint_dir=out.parent)
    save_checkpoint(out, trainer.checkpoint())
    report.plot_training_log(log_path, log_path.with_suffix(".png"))
    print(f"trained {cfg.strategy} encoder for {cfg.iterations} iterations -> {out}")
    return 0


def cmd_eval(args) -> int:
    model = _load_model(args.model)
    wanted = [m.strip() for m in args.metrics.split(",") if m.strip()]
    bad = set(wanted) - {"psnr", "ssim", "fid"}
    if bad:
        raise ValueError(f"unknown metrics {sorted(bad)}")
    extractor = proxy_extractor() if "fid" in wanted else None
    rows = []
    for spec in args.data:
        ds = resolve_dataset(spec, model.config, split="val")
        images = ds.images[: args.limit] if args.limit else ds.images
        inputs = images
        if args.denoise_sigma is not None:
            inputs, _ = make_denoise_batch(images, args.denoise_sigma, args.seed)
        recon = model.reconstruct(inputs, use_noise=not args.no_noise)
        for metric in wanted:
            if metric == "psnr":
                value = float(metrics.batch_psnr(recon, images).mean())
            elif metric == "ssim":
                value = float(np.mean([metrics.image_ssim(a, b) for a, b in zip(recon, images)]))
            else:
                n = min(len(images), args.fid_samples)
                value = metrics.fid(
                    metrics.extract_stats(images[:n], extractor), metrics.extract_stats(recon[:n], extractor)
                )
            rows.append({"dataset": spec, "model": Path(args.model).name, "metric": metric, "value": value})
    path = report.write_report(rows, args.report)
    report.plot_metrics(rows, path.with_suffix(".png"))
    for row in rows:
        print(f"{row['dataset']}\t{row['metric']}\t{row['value']:.4f}")
    return 0


def cmd_reconstruct(args) -> int:
    model = _load_model(args.model)
    ds = resolve_dataset(args.data, model.config, split="val")
    images = ds.images[: args.limit] if args.limit else ds.images
    recon = model.reconstruct(images, use_noise=not args.no_noise)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, img in enumerate(recon):
        save_image(img, out / f"recon_{i}.png")
    shown = min(8, len(images))
    grid = torch.stack([images[:shown], recon[:shown]])
    report.plot_image_grid(grid, out / "reconstruction.png", row_labels=["input", "recon"])
    print(f"wrote {len(recon)} reconstructions to {out}")
    return 0


def cmd_denoise(args) -> int:
    model = _load_model(args.model)
    ds = resolve_dataset(args.data, model.config, split="val")
    images = ds.images[: args.limit] if args.limit else ds.images
    noisy, _ = make_denoise_batch(images, args.sigma, args.seed)
    clean = model.reconstruct(noisy)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(len(images)):
        save_image(noisy[i], out / f"noisy_{i}.png")
        save_image(clean[i], out / f"denoised_{i}.png")
    rows = [
        {"dataset": args.data, "model": Path(args.model).name, "metric": "psnr_noisy", "value": float(metrics.batch_psnr(noisy, images).mean())},
        {"dataset": args.data, "model": Path(args.model).name, "metric": "psnr_denoised", "value": float(metrics.batch_psnr(clean, images).mean())},
    ]
    report.write_report(rows, out / "denoise.csv")
    shown = min(6, len(images))
    report.plot_image_grid(torch.stack([images[:shown], noisy[:shown], clean[:shown]]), out / "denoise.png", row_labels=["clean", f"sigma {args.sigma:g}", "denoised"])
    for row in rows:
        print(f"{row['metric']}\t{row['value']:.4f}")
    return 0


def cmd_interpolate(args) -> int:
    model = _load_model(args.model)
    a = _pick_image(args, model, "image_a")
    b = _pick_image(args, model, "image_b")
    frames = analysis.interpolate(a, b, model, steps=args.steps, mode=args.mode, seed=args.seed)
    mode = {"latent": "latent_only", "noise": "noise_only"}.get(args.mode, args.mode)
    analysis.write_interpolation(frames, mode, args.out)
    alphas = [f"{i / (args.steps - 1):.2f}" for i in range(args.steps)]
    report.plot_image_grid(frames[None], Path(args.out) / f"interp_{mode}.fig.png", col_labels=alphas)
    print(f"wrote {args.steps} frames to {args.out}")
    return 0


def cmd_noise_shift(args) -> int:
    model = _load_model(args.model)
    image = _pick_image(args, model)
    site = args.site if args.site == "all" else int(args.site)
    result = analysis.noise_shift(image, model, site=site, factors=_floats(args.factors))
    analysis.write_noise_shift(result, args.out)
    report.plot_image_grid(
        result["grid"],
        Path(args.out) / "noise_shift.fig.png",
        row_labels=[f"site {k}" for k in result["sites"]],
        col_labels=[f"x{f:g}" for f in result["factors"]],
    )
    print(f"wrote noise-shift grid ({len(result['sites'])} x {len(result['factors'])}) to {args.out}")
    return 0


def cmd_visualize_noise(args) -> int:
    model = _load_model(args.model)
    image = _pick_image(args, model)
    maps = analysis.visualize_noise(image, model)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    from PIL import Image

    for k, m in enumerate(maps):
        Image.fromarray(np.rint(m.numpy() * 255).astype(np.uint8)).save(out / f"noise_site{k}.png")
    report.plot_noise_maps(maps, out / "noise_maps.fig.png")
    print(f"wrote {len(maps)} noise maps to {out}")
    return 0


def cmd_benchmark(args) -> int:
    model = _load_model(args.model)
    if args.data:
        images = resolve_dataset(args.data, model.config).images
    else:
        images = torch.zeros(args.batch, 3, model.config.resolution, model.config.resolution)
    result = metrics.benchmark_throughput(model.encoder, model.decoder, images, args.n, args.batch)
    print(f"images_per_sec\t{result['images_per_sec']:.3f}")
    print(f"n_images\t{result['n_images']}")
    print(f"batch\t{result['batch']}")
    print(f"hardware\t{result['hardware']}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_image_args(p, names=("image",)):
    for name in names:
        p.add_argument(f"--{name.replace('_', '-')}", dest=name, help="image file")
    p.add_argument("--data", help="dataset (directory or synth:<kind>:<n>:<seed>) to pick images from")
    p.add_argument("--index", type=int, default=0)
    if "image_b" in names:
        p.add_argument("--index-b", dest="index_b", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stylenoise", description="Encoder training and analysis for frozen style-based decoders.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init-decoder", help="write a seeded random frozen decoder")
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_init_decoder)

    p = sub.add_parser("train", help="train an encoder against a frozen decoder")
    p.add_argument("--config")
    p.add_argument("--decoder", required=True, help="decoder checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--strategy", choices=["plain", "two-network", "lr-split", "two_network", "lr_split"])
    p.add_argument("--denoise-sigmas", help="comma-separated sigmas on the 0-255 scale")
    p.add_argument("--per-sigma", action="store_true", help="train at the first sigma only instead of blind")
    p.add_argument("--iterations", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--base-lr", type=float)
    p.add_argument("--lr-split-ratio", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--log", help="training metrics CSV (default: <out>.log.csv)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="PSNR / SSIM / proxy-FID of reconstructions")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True, action="append")
    p.add_argument("--metrics", default="psnr,ssim,fid")
    p.add_argument("--report", required=True)
    p.add_argument("--fid-samples", type=int, default=metrics.DESK_FID_SAMPLES)
    p.add_argument("--limit", type=int)
    p.add_argument("--no-noise", action="store_true", help="decode with all-zero noise maps")
    p.add_argument("--denoise-sigma", type=float, help="corrupt inputs with this sigma before encoding")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("reconstruct")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--limit", type=int)
    p.add_argument("--no-noise", action="store_true")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("denoise")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--sigma", type=float, default=25.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--limit", type=int)
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("interpolate")
    p.add_argument("--model", required=True)
    _add_image_args(p, ("image_a", "image_b"))
    p.add_argument("--mode", choices=["both", "latent", "noise", "latent_only", "noise_only"], default="both")
    p.add_argument("--steps", type=int, default=8)
    p.add_argument("--seed", type=int, default=0, help="seed of the fixed noise in latent mode")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_interpolate)

    p = sub.add_parser("noise-shift")
    p.add_argument("--model", required=True)
    _add_image_args(p)
    p.add_argument("--site", default="all")
    p.add_argument("--factors", default=",".join(f"{f:g}" for f in analysis.DEFAULT_SHIFT_FACTORS))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_noise_shift)

    p = sub.add_parser("visualize-noise")
    p.add_argument("--model", required=True)
    _add_image_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_visualize_noise)

    p = sub.add_parser("benchmark", help="encode+decode throughput")
    p.add_argument("--model", required=True)
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--data")
    p.set_defaults(func=cmd_benchmark)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, RuntimeError, OSError) as exc:
        print(f"stylenoise {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
