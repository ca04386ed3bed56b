"""Reconstruction objective: pixel MSE plus an LPIPS-form perceptual distance.

The default feature extractor is a fixed-seed random convolutional pyramid
(a proxy for the pretrained network LPIPS normally uses).  Anything with the
same ``stages``/``weights`` interface can be plugged in.
"""
from __future__ import annotations

from typing import List, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .core import ShapeError, init_value

NORM_EPS = 1e-10
PROXY_SEED = 1234
PROXY_CHANNELS = (16, 32, 64)


class FeatureExtractor(nn.Module):
    """Ordered feature stages with non-negative per-channel weights.

    Stage ``k`` is applied to the output of stage ``k-1``.  Parameters are
    buffers, so optimizers never see them.
    """

    def __init__(self, stages: Sequence[nn.Module], weights: Sequence[torch.Tensor]):
        super().__init__()
        if len(stages) != len(weights):
            raise ValueError("one weight vector per stage is required")
        self.stages = nn.ModuleList(stages)
        for k, w in enumerate(weights):
            if (w < 0).any():
                raise ValueError("perceptual channel weights must be non-negative")
            self.register_buffer(f"weight_{k}", w.detach().clone())
        for p in list(self.parameters()):
            p.requires_grad_(False)

    @property
    def weights(self) -> List[torch.Tensor]:
        return [getattr(self, f"weight_{k}") for k in range(len(self.stages))]

    def __len__(self) -> int:
        return len(self.stages)

    def features(self, x: torch.Tensor) -> List[torch.Tensor]:
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats

    def embed(self, x: torch.Tensor) -> torch.Tensor:
        """Global-average-pooled features of all stages, ``[B, D]`` (used for FID)."""
        return torch.cat([f.mean(dim=(2, 3)) for f in self.features(x)], dim=1)


class _ConvStage(nn.Module):
    def __init__(self, in_ch, out_ch, stride):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1)

    def forward(self, x):
        return F.relu(self.conv(x))


class IdentityStage(nn.Module):
    def forward(self, x):
        return x


def proxy_extractor(seed: int = PROXY_SEED, channels: Sequence[int] = PROXY_CHANNELS, dtype=torch.float32) -> FeatureExtractor:
    """Random 3-stage pyramid with unit channel weights.

    Kernels are He-scaled normal draws from the Philox stream for ``seed`` so
    features keep a useful dynamic range without training.
    """
    stages, weights = [], []
    in_ch = 3
    for k, out_ch in enumerate(channels):
        stage = _ConvStage(in_ch, out_ch, stride=1 if k == 0 else 2)
        fan_in = in_ch * 9
        w = init_value(f"proxy.{k}.weight", (out_ch, in_ch, 3, 3), seed)
        with torch.no_grad():
            stage.conv.weight.copy_(torch.from_numpy(w) / 0.02 * (2.0 / fan_in) ** 0.5)
            stage.conv.bias.zero_()
        stages.append(stage)
        weights.append(torch.ones(out_ch))
        in_ch = out_ch
    return FeatureExtractor(stages, weights).to(dtype)


def _same_shape(x: torch.Tensor, y: torch.Tensor) -> None:
    if x.shape != y.shape:
        raise ShapeError(f"shape mismatch: {tuple(x.shape)} vs {tuple(y.shape)}")


def mse_loss(x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    _same_shape(x, y)
    return (x - y).pow(2).mean()


def unit_normalize(f: torch.Tensor) -> torch.Tensor:
    return f / torch.sqrt(f.pow(2).sum(dim=1, keepdim=True) + NORM_EPS)


def perceptual_loss(x: torch.Tensor, y: torch.Tensor, extractor: FeatureExtractor) -> torch.Tensor:
    """Sum over stages of the spatial mean of weighted squared normalized-feature differences.

    Averaged over the batch.
    """
    _same_shape(x, y)
    total = x.new_zeros(())
    if len(extractor) == 0:
        return total
    for fx, fy, w in zip(extractor.features(x), extractor.features(y), extractor.weights):
        diff = (unit_normalize(fx) - unit_normalize(fy)).pow(2)
        total = total + (diff * w.to(diff.dtype)[None, :, None, None]).sum(dim=1).mean()
    return total


def total_loss(x: torch.Tensor, y: torch.Tensor, extractor: FeatureExtractor) -> torch.Tensor:
    return mse_loss(x, y) + perceptual_loss(x, y, extractor)
