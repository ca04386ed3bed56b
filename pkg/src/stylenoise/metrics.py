"""PSNR, SSIM, FID over a pluggable extractor, and the throughput benchmark."""
from __future__ import annotations

import math
import platform
import time
from dataclasses import dataclass
from typing import Dict

import numpy as np
import torch
import torch.nn.functional as F

from .core import NoiseMapSet, ShapeError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
FID_EIG_TOL = 1e-6
DESK_FID_SAMPLES = 2048


def to_peak_scale(image: torch.Tensor, peak: float = 255.0) -> torch.Tensor:
    """Map [-1, 1] images onto [0, peak]."""
    return (image.clamp(-1, 1) + 1.0) * (peak / 2.0)


def psnr(x, y, peak: float = 255.0) -> float:
    """PSNR in dB of arrays already on the ``[0, peak]`` scale; ``inf`` for identical inputs."""
    x = torch.as_tensor(x, dtype=torch.float64)
    y = torch.as_tensor(y, dtype=torch.float64)
    if x.shape != y.shape:
        raise ShapeError(f"shape mismatch: {tuple(x.shape)} vs {tuple(y.shape)}")
    if peak <= 0:
        raise ValueError("peak must be positive")
    mse = (x - y).pow(2).mean().item()
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def image_psnr(a: torch.Tensor, b: torch.Tensor) -> float:
    """PSNR of two [-1, 1] images on the 0-255 convention."""
    return psnr(to_peak_scale(a), to_peak_scale(b), 255.0)


def batch_psnr(a: torch.Tensor, b: torch.Tensor) -> np.ndarray:
    return np.array([image_psnr(x, y) for x, y in zip(a, b)])


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA, dtype=torch.float64) -> torch.Tensor:
    coords = torch.arange(size, dtype=dtype) - (size - 1) / 2.0
    g = torch.exp(-(coords**2) / (2 * sigma**2))
    g = g / g.sum()
    return torch.outer(g, g)


def ssim(x, y, peak: float = 255.0) -> float:
    """Mean SSIM with an 11x11 Gaussian window, computed per channel over valid positions.

    Accepts ``[C, H, W]`` or ``[B, C, H, W]`` on the ``[0, peak]`` scale.
    """
    x = torch.as_tensor(x, dtype=torch.float64)
    y = torch.as_tensor(y, dtype=torch.float64)
    if x.shape != y.shape:
        raise ShapeError(f"shape mismatch: {tuple(x.shape)} vs {tuple(y.shape)}")
    if x.dim() == 3:
        x, y = x[None], y[None]
    if min(x.shape[-2:]) < SSIM_WINDOW:
        raise ShapeError(f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW} for SSIM")
    b, c, h, w = x.shape
    win = gaussian_window(dtype=x.dtype)[None, None]
    xs = x.reshape(b * c, 1, h, w)
    ys = y.reshape(b * c, 1, h, w)

    def filt(t):
        return F.conv2d(t, win)

    mu_x, mu_y = filt(xs), filt(ys)
    sxx = filt(xs * xs) - mu_x**2
    syy = filt(ys * ys) - mu_y**2
    sxy = filt(xs * ys) - mu_x * mu_y
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (sxx + syy + c2)
    smap = (num / den).reshape(b, c, -1)
    return smap.mean(dim=2).mean().item()


def image_ssim(a: torch.Tensor, b: torch.Tensor) -> float:
    return ssim(to_peak_scale(a), to_peak_scale(b), 255.0)


# ---------------------------------------------------------------------------
# FID
# ---------------------------------------------------------------------------


@dataclass
class FeatureStats:
    mean: np.ndarray
    cov: np.ndarray
    count: int

    @classmethod
    def from_features(cls, feats) -> "FeatureStats":
        feats = np.asarray(feats, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] < 2:
            raise ValueError("need at least two feature vectors")
        return cls(feats.mean(axis=0), np.cov(feats, rowvar=False).reshape(feats.shape[1], feats.shape[1]), feats.shape[0])

    def merge(self, other: "FeatureStats") -> "FeatureStats":
        """Combine statistics of two disjoint sample sets."""
        n = self.count + other.count
        delta = other.mean - self.mean
        mean = self.mean + delta * (other.count / n)
        scatter = (
            self.cov * (self.count - 1)
            + other.cov * (other.count - 1)
            + np.outer(delta, delta) * (self.count * other.count / n)
        )
        return FeatureStats(mean, scatter / (n - 1), n)


def _psd_sqrt(mat: np.ndarray, tol: float = FID_EIG_TOL) -> np.ndarray:
    vals, vecs = np.linalg.eigh((mat + mat.T) / 2.0)
    scale = max(1.0, float(np.abs(vals).max(initial=0.0)))
    if vals.min(initial=0.0) < -tol * scale:
        raise ValueError(f"matrix is not positive semi-definite (min eigenvalue {vals.min():.3e})")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def fid(a: FeatureStats, b: FeatureStats) -> float:
    """Frechet distance between two Gaussian feature fits.

    The trace of (Sa Sb)^(1/2) is taken as the trace of the symmetric
    (Sa^(1/2) Sb Sa^(1/2))^(1/2), which has the same eigenvalues.
    """
    if a.mean.shape != b.mean.shape or a.cov.shape != b.cov.shape:
        raise ShapeError(f"feature dimension mismatch: {a.mean.shape} vs {b.mean.shape}")
    root_a = _psd_sqrt(a.cov)
    inner = root_a @ b.cov @ root_a
    vals = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    scale = max(1.0, float(np.abs(vals).max(initial=0.0)))
    if vals.min(initial=0.0) < -FID_EIG_TOL * scale:
        raise ValueError(f"product covariance is not PSD (min eigenvalue {vals.min():.3e})")
    tr_covmean = np.sqrt(np.clip(vals, 0.0, None)).sum()
    diff = a.mean - b.mean
    value = float(diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2.0 * tr_covmean)
    return max(value, 0.0) if value > -FID_EIG_TOL else value


@torch.no_grad()
def extract_stats(images: torch.Tensor, extractor, batch_size: int = 64) -> FeatureStats:
    """Gaussian fit of the extractor embeddings of ``images``, computed in batches."""
    feats = [
        extractor.embed(images[start : start + batch_size].to(torch.float32)).double().numpy()
        for start in range(0, images.shape[0], batch_size)
    ]
    if not feats:
        raise ValueError("need at least two images for FID statistics")
    return FeatureStats.from_features(np.concatenate(feats))


# ---------------------------------------------------------------------------
# throughput
# ---------------------------------------------------------------------------


def hardware_string() -> str:
    return f"{platform.processor() or platform.machine()} / torch {torch.__version__} / {torch.get_num_threads()} threads"


@torch.no_grad()
def benchmark_throughput(
    encoder, decoder, images: torch.Tensor, n_images: int, batch: int, warmup_batches: int = 2
) -> Dict[str, object]:
    """Time full encode+decode round trips on exactly ``n_images`` images.

    ``warmup_batches`` extra batches run first and are not timed or counted.
    Images are drawn cyclically from ``images``.
    """
    if n_images < batch or batch < 1:
        raise ValueError("need n_images >= batch >= 1")
    pool = images.shape[0]

    def take(start, count):
        idx = torch.arange(start, start + count) % pool
        return images[idx]

    def round_trip(x):
        out = encoder(x)
        noise = out.noise if out.noise is not None else NoiseMapSet.zeros(decoder.layout, x.shape[0])
        return decoder(out.latent, noise)

    for k in range(warmup_batches):
        round_trip(take(k * batch, batch))
    processed = 0
    start = time.perf_counter()
    while processed < n_images:
        count = min(batch, n_images - processed)
        y = round_trip(take(processed, count))
        processed += y.shape[0]
    elapsed = time.perf_counter() - start
    return {
        "images_per_sec": processed / elapsed if elapsed > 0 else math.inf,
        "n_images": processed,
        "batch": batch,
        "seconds": elapsed,
        "hardware": hardware_string(),
    }
