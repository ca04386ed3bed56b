"""Image folders and procedural desk-scale datasets.

All images are float32 ``[3, R, R]`` tensors in [-1, 1].
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, List

import numpy as np
import torch
from PIL import Image, ImageDraw, UnidentifiedImageError

from .core import ConfigError, ModelConfig, philox

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".gif", ".tif", ".tiff", ".webp", ".ppm"}
SYNTH_KINDS = ("shapes", "textures", "checkers")


@dataclass
class Dataset:
    images: torch.Tensor  # [N, 3, R, R]
    source: str
    split: str = "train"
    names: List[str] = field(default_factory=list)

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def resolution(self) -> int:
        return self.images.shape[-1]

    def order(self, seed: int, epoch: int) -> np.ndarray:
        """Permutation of sample indices for ``epoch``; reproducible from (seed, epoch)."""
        return philox(seed, 0x0DA7A, epoch).permutation(len(self))

    def batches(self, batch_size: int, seed: int) -> Iterator[np.ndarray]:
        """Endless stream of index batches, wrapping across epochs."""
        epoch, pending = 0, []
        while True:
            while len(pending) < batch_size:
                pending.extend(self.order(seed, epoch).tolist())
                epoch += 1
            yield np.asarray(pending[:batch_size])
            pending = pending[batch_size:]


def pil_to_tensor(img: Image.Image, resolution: int) -> torch.Tensor:
    img = img.convert("RGB")
    if img.size != (resolution, resolution):
        # aspect ratio is deliberately ignored
        img = img.resize((resolution, resolution), Image.BILINEAR)
    arr = np.asarray(img, dtype=np.float32) / 127.5 - 1.0
    return torch.from_numpy(arr.transpose(2, 0, 1).copy())


def tensor_to_uint8(image: torch.Tensor) -> np.ndarray:
    """``[3, H, W]`` in [-1, 1] -> ``[H, W, 3]`` uint8."""
    arr = image.detach().clamp(-1, 1).cpu().numpy().transpose(1, 2, 0)
    return np.rint((arr + 1.0) * 127.5).astype(np.uint8)


def save_image(image: torch.Tensor, path) -> None:
    Image.fromarray(tensor_to_uint8(image)).save(path)


def load_dataset(path, config: ModelConfig, split: str = "train") -> Dataset:
    root = Path(path)
    if not root.is_dir():
        raise FileNotFoundError(f"{root} is not a directory")
    files = sorted(p for p in root.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise ConfigError(f"{root} contains no images")
    tensors, names = [], []
    for f in files:
        try:
            with Image.open(f) as img:
                tensors.append(pil_to_tensor(img, config.resolution))
            names.append(f.name)
        except (UnidentifiedImageError, OSError) as exc:
            log.warning("skipping undecodable image %s: %s", f, exc)
    if not tensors:
        raise ConfigError(f"no decodable images in {root}")
    return Dataset(torch.stack(tensors), source=str(root), split=split, names=names)


# ---------------------------------------------------------------------------
# procedural images
# ---------------------------------------------------------------------------


def _color(rng) -> tuple:
    return tuple(int(c) for c in rng.integers(0, 256, size=3))


def _shapes_image(rng, res: int) -> np.ndarray:
    scale = 4
    size = res * scale
    img = Image.new("RGB", (size, size), _color(rng))
    draw = ImageDraw.Draw(img)
    for _ in range(int(rng.integers(2, 6))):
        kind = int(rng.integers(0, 3))
        cx, cy = rng.uniform(0, size, size=2)
        radius = rng.uniform(0.12, 0.35) * size
        if kind == 0:
            draw.ellipse([cx - radius, cy - radius, cx + radius, cy + radius], fill=_color(rng))
        elif kind == 1:
            w, h = rng.uniform(0.3, 1.0, size=2) * radius
            draw.rectangle([cx - w, cy - h, cx + w, cy + h], fill=_color(rng))
        else:
            angles = np.sort(rng.uniform(0, 2 * np.pi, size=3))
            pts = [(cx + radius * np.cos(a), cy + radius * np.sin(a)) for a in angles]
            draw.polygon(pts, fill=_color(rng))
    img = img.resize((res, res), Image.BILINEAR)
    return np.asarray(img, dtype=np.float32)


def _textures_image(rng, res: int) -> np.ndarray:
    out = np.zeros((res, res, 3), dtype=np.float32)
    amplitude = 1.0
    for octave in range(4):
        cells = 2 ** (octave + 2)
        grid = rng.uniform(-1, 1, size=(3, cells + 1, cells + 1)).astype(np.float32)
        up = torch.nn.functional.interpolate(
            torch.from_numpy(grid)[None], size=(res, res), mode="bicubic", align_corners=True
        )[0].numpy()
        out += amplitude * up.transpose(1, 2, 0)
        amplitude *= 0.5
    base = rng.uniform(64, 192, size=3).astype(np.float32)
    out = base + 50.0 * out
    return np.clip(out, 0, 255)


def _checkers_image(rng, res: int) -> np.ndarray:
    cell = int(rng.choice([max(2, res // 16), max(2, res // 8), max(2, res // 4)]))
    ox, oy = rng.integers(0, cell, size=2)
    yy, xx = np.mgrid[0:res, 0:res]
    mask = (((xx + ox) // cell + (yy + oy) // cell) % 2).astype(bool)
    a = np.asarray(_color(rng), dtype=np.float32)
    b = np.asarray(_color(rng), dtype=np.float32)
    return np.where(mask[..., None], a, b).astype(np.float32)


_GENERATORS = {"shapes": _shapes_image, "textures": _textures_image, "checkers": _checkers_image}


def synth_dataset(kind: str, n: int, seed: int, resolution: int = 64, split: str = "train") -> Dataset:
    """Procedural dataset; image ``i`` depends only on ``(kind, seed, i)``."""
    if kind not in _GENERATORS:
        raise ConfigError(f"unknown synthetic kind {kind!r}; choose from {SYNTH_KINDS}")
    if n < 1:
        raise ConfigError("n must be >= 1")
    kind_key = SYNTH_KINDS.index(kind)
    images = []
    for i in range(n):
        rng = philox(seed, 0x5E7, kind_key, i)
        arr = _GENERATORS[kind](rng, resolution) / 127.5 - 1.0
        images.append(torch.from_numpy(arr.transpose(2, 0, 1).astype(np.float32).copy()))
    return Dataset(torch.stack(images), source=f"synth:{kind}:{n}:{seed}", split=split)


def resolve_dataset(spec: str, config: ModelConfig, split: str = "train") -> Dataset:
    """``synth:<kind>:<n>:<seed>`` or a directory path."""
    if spec.startswith("synth:"):
        parts = spec.split(":")
        if len(parts) != 4:
            raise ConfigError(f"bad synthetic dataset spec {spec!r}; expected synth:<kind>:<n>:<seed>")
        _, kind, n, seed = parts
        return synth_dataset(kind, int(n), int(seed), resolution=config.resolution, split=split)
    return load_dataset(spec, config, split=split)
