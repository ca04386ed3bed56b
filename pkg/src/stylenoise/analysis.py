"""Probes of what the encoder puts into latent codes and noise maps."""
from __future__ import annotations

from pathlib import Path
from typing import Dict, List, Sequence, Union

import torch

from .core import LatentCode, NoiseMapSet, ShapeError, check_image
from .data import save_image
from .model import Autoencoder

DEFAULT_SHIFT_FACTORS = (-2.0, -0.75, 0.5, 1.75, 3.0)
INTERP_MODES = ("both", "latent_only", "noise_only")


def _single(image: torch.Tensor, model: Autoencoder) -> torch.Tensor:
    if image.dim() == 3:
        image = image[None]
    check_image(image, model.config.resolution)
    if image.shape[0] != 1:
        raise ShapeError("expected a single image")
    return image


def _lerp(a: torch.Tensor, b: torch.Tensor, alpha: float) -> torch.Tensor:
    # (1 - a) * x + a * y hits both endpoints exactly
    return (1.0 - alpha) * a + alpha * b


@torch.no_grad()
def visualize_noise(image: torch.Tensor, model: Autoencoder) -> List[torch.Tensor]:
    """Predicted noise maps, each min-max scaled to [0, 1] on its own; constant maps become 0.5."""
    out = model.encode(_single(image, model))
    if out.noise is None:
        raise ShapeError("model predicts no noise maps")
    return [normalize_map(m[0, 0]) for m in out.noise.maps]


def normalize_map(m: torch.Tensor) -> torch.Tensor:
    lo, hi = m.min(), m.max()
    if hi == lo:
        return torch.full_like(m, 0.5)
    return (m - lo) / (hi - lo)


@torch.no_grad()
def noise_shift(
    image: torch.Tensor,
    model: Autoencoder,
    site: Union[str, int] = "all",
    factors: Sequence[float] = DEFAULT_SHIFT_FACTORS,
) -> Dict[str, object]:
    """Resynthesize with the predicted noise map of a site multiplied by each factor.

    ``site="all"`` gives one grid row per site, a site id gives a single row.
    Returns ``{"grid": [rows, len(factors), 3, R, R], "sites": [...], "factors": [...]}``.
    """
    image = _single(image, model)
    factors = [float(f) for f in factors]
    if not all(torch.isfinite(torch.tensor(factors))):
        raise ValueError("factors must be finite")
    out = model.encode(image)
    if out.noise is None:
        raise ShapeError("model predicts no noise maps")
    n_sites = model.layout.num_sites
    if site == "all":
        sites = list(range(n_sites))
    else:
        site = int(site)
        if not 0 <= site < n_sites:
            raise ShapeError(f"unknown site id {site}; decoder has sites 0..{n_sites - 1}")
        sites = [site]
    rows = []
    for k in sites:
        row = []
        for f in factors:
            maps = list(out.noise.maps)
            maps[k] = maps[k] * f
            row.append(model.decode(out.latent, NoiseMapSet(tuple(maps))).clamp(-1, 1)[0])
        rows.append(torch.stack(row))
    return {"grid": torch.stack(rows), "sites": sites, "factors": factors}


@torch.no_grad()
def interpolate(
    img_a: torch.Tensor,
    img_b: torch.Tensor,
    model: Autoencoder,
    steps: int = 8,
    mode: str = "both",
    seed: int = 0,
) -> torch.Tensor:
    """Frames ``[steps, 3, R, R]`` blending two images' predicted codes.

    ``both`` blends latent and noise, ``latent_only`` blends the latent under
    a fixed seeded noise draw, ``noise_only`` blends the noise under the latent
    of ``img_a``.  Latents blend linearly in the space the encoder predicts.
    """
    mode = {"latent": "latent_only", "noise": "noise_only"}.get(mode, mode)
    if mode not in INTERP_MODES:
        raise ValueError(f"mode must be one of {INTERP_MODES}")
    if steps < 2:
        raise ValueError("steps must be >= 2")
    a = model.encode(_single(img_a, model))
    b = model.encode(_single(img_b, model))
    if mode != "latent_only" and (a.noise is None or b.noise is None):
        raise ShapeError("model predicts no noise maps")
    fixed = model.random_noise(seed) if mode == "latent_only" else None
    frames = []
    for i in range(steps):
        alpha = i / (steps - 1)
        if mode == "noise_only":
            latent = a.latent
        else:
            latent = LatentCode(a.latent.kind, _lerp(a.latent.data, b.latent.data, alpha))
        if mode == "latent_only":
            noise = fixed
        else:
            noise = NoiseMapSet(tuple(_lerp(x, y, alpha) for x, y in zip(a.noise.maps, b.noise.maps)))
        frames.append(model.decode(latent, noise).clamp(-1, 1)[0])
    return torch.stack(frames)


def stitch(grid: torch.Tensor) -> torch.Tensor:
    """``[rows, cols, 3, H, W]`` (or ``[cols, 3, H, W]``) -> one ``[3, rows*H, cols*W]`` image."""
    if grid.dim() == 4:
        grid = grid[None]
    rows, cols, c, h, w = grid.shape
    return grid.permute(2, 0, 3, 1, 4).reshape(c, rows * h, cols * w)


def format_factor(f: float) -> str:
    return f"{f:g}"


def write_noise_shift(result: Dict[str, object], outdir, ext: str = "png") -> List[Path]:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = []
    grid = result["grid"]
    for r, k in enumerate(result["sites"]):
        for c, f in enumerate(result["factors"]):
            p = outdir / f"site{k}_f{format_factor(f)}.{ext}"
            save_image(grid[r, c], p)
            paths.append(p)
    p = outdir / f"noise_shift_grid.{ext}"
    save_image(stitch(grid), p)
    paths.append(p)
    return paths


def write_interpolation(frames: torch.Tensor, mode: str, outdir, ext: str = "png") -> List[Path]:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, frame in enumerate(frames):
        p = outdir / f"interp_{mode}_{i}.{ext}"
        save_image(frame, p)
        paths.append(p)
    p = outdir / f"interp_{mode}_strip.{ext}"
    save_image(stitch(frames), p)
    paths.append(p)
    return paths
