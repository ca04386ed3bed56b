"""Fully convolutional residual encoder with per-split latent and noise heads.

Backbone: two start blocks at the input resolution, then two blocks per
downsampling step (the first of each pair has stride 2).  Blocks are
pre-activation residual blocks of two 3x3 convolutions; channels follow
``ModelConfig.channels``.

After a block the network may split.  A latent head (global average pool +
1x1 conv) predicts one W+ row; a noise head (1x1 conv) predicts the noise map
at the block's feature resolution.  With a v2 decoder every block splits;
with v1 only the first block of each resolution does.  Head outputs are
collected fine-to-coarse and reversed so the deepest features fill the
coarsest decoder slots.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, List, Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from .core import (
    DECODER_START_RES,
    ConfigError,
    LatentCode,
    ModelConfig,
    NoiseMapSet,
    ShapeError,
    check_image,
    derive_layout,
    log2_int,
)

LRELU_SLOPE = 0.2


def num_blocks(insize: int, outsize: int) -> int:
    """Residual blocks needed to go from ``insize`` down to ``outsize``."""
    if insize < outsize:
        raise ConfigError(f"insize {insize} is smaller than outsize {outsize}")
    return 2 + 2 * (log2_int(insize) - log2_int(outsize))


def block_resolutions(insize: int, outsize: int) -> List[int]:
    res = [insize, insize]
    r = insize
    while r > outsize:
        r //= 2
        res += [r, r]
    return res


class ResBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, downsample: bool = False):
        super().__init__()
        stride = 2 if downsample else 1
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.skip = nn.Conv2d(in_ch, out_ch, 1, stride=stride) if (downsample or in_ch != out_ch) else None

    def forward(self, x):
        h = self.conv1(F.leaky_relu(x, LRELU_SLOPE))
        h = self.conv2(F.leaky_relu(h, LRELU_SLOPE))
        return h + (x if self.skip is None else self.skip(x))


class LatentHead(nn.Module):
    def __init__(self, in_ch: int, latent_dim: int):
        super().__init__()
        self.proj = nn.Conv2d(in_ch, latent_dim, 1)

    def forward(self, x):
        return self.proj(x.mean(dim=(2, 3), keepdim=True)).flatten(1)


@dataclass
class EncoderOutput:
    latent: Optional[LatentCode]
    noise: Optional[NoiseMapSet]


class Encoder(nn.Module):
    """Residual encoder; ``latent_heads``/``noise_heads`` switch head families off."""

    def __init__(self, config: ModelConfig, latent_heads: bool = True, noise_heads: bool = True):
        super().__init__()
        self.config = config
        self.layout = derive_layout(config)
        self.has_latent = latent_heads
        self.has_noise = noise_heads
        resolutions = block_resolutions(config.resolution, config.encoder_out_size)
        assert len(resolutions) == num_blocks(config.resolution, config.encoder_out_size)
        self.block_res = resolutions

        self.blocks = nn.ModuleList()
        in_ch = 3
        for i, res in enumerate(resolutions):
            out_ch = config.channels(res)
            down = i >= 2 and i % 2 == 0
            self.blocks.append(ResBlock(in_ch, out_ch, downsample=down))
            in_ch = out_ch

        if config.decoder_version == "v2":
            self.splits = list(range(len(resolutions)))
        else:
            self.splits = list(range(0, len(resolutions), 2))

        n = config.latent_dim
        if not latent_heads:
            self.latent_heads = nn.ModuleList()
        elif config.projection_target == "wplus":
            self.latent_heads = nn.ModuleList(LatentHead(config.channels(resolutions[i]), n) for i in self.splits)
        else:
            self.latent_heads = nn.ModuleList([LatentHead(config.channels(resolutions[-1]), n)])
        if noise_heads:
            self.noise_heads = nn.ModuleList(nn.Conv2d(config.channels(resolutions[i]), 1, 1) for i in self.splits)
        else:
            self.noise_heads = nn.ModuleList()
        self._check_heads()

    def _check_heads(self):
        # every decoder slot and site must come from exactly one head
        head_res = [self.block_res[i] for i in reversed(self.splits)]
        if self.has_noise and head_res != self.layout.site_resolutions():
            raise ShapeError(
                f"noise heads at {head_res} do not match decoder sites {self.layout.site_resolutions()}"
            )
        if self.has_latent and self.config.projection_target == "wplus":
            if head_res != list(self.layout.slot_resolutions):
                raise ShapeError(
                    f"latent heads at {head_res} do not match decoder slots {list(self.layout.slot_resolutions)}"
                )
        if self.has_latent and self.config.projection_target == "z" and self.block_res[-1] != DECODER_START_RES:
            raise ShapeError("Z head must sit on the 4x4 features")

    def backbone_parameters(self) -> Iterator[nn.Parameter]:
        return self.blocks.parameters()

    def latent_parameters(self) -> Iterator[nn.Parameter]:
        return self.latent_heads.parameters()

    def noise_parameters(self) -> Iterator[nn.Parameter]:
        return self.noise_heads.parameters()

    def forward(self, image: torch.Tensor, with_noise: bool = True) -> EncoderOutput:
        check_image(image, self.config.resolution)
        features = []
        x = image
        for block in self.blocks:
            x = block(x)
            features.append(x)
        split_feats = [features[i] for i in self.splits]

        latent = None
        if self.has_latent:
            if self.config.projection_target == "wplus":
                rows = [head(f) for head, f in zip(self.latent_heads, split_feats)]
                latent = LatentCode("wplus", torch.stack(rows[::-1], dim=1))
            else:
                latent = LatentCode("z", self.latent_heads[0](features[-1]))

        noise = None
        if self.has_noise and with_noise:
            maps = [head(f) for head, f in zip(self.noise_heads, split_feats)]
            noise = NoiseMapSet(tuple(maps[::-1]))
        return EncoderOutput(latent=latent, noise=noise)


def encode(encoder: Encoder, image: torch.Tensor, with_noise: bool = True) -> EncoderOutput:
    return encoder(image, with_noise=with_noise)


class TwoNetworkEncoder(nn.Module):
    """Independent latent network ``L`` and noise network ``N``."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.latent_net = Encoder(config, latent_heads=True, noise_heads=False)
        self.noise_net = Encoder(config, latent_heads=False, noise_heads=True)

    def forward(self, image: torch.Tensor, with_noise: bool = True) -> EncoderOutput:
        return encode_two_network(image, self.latent_net, self.noise_net, with_noise=with_noise)


def encode_two_network(image, latent_net: Encoder, noise_net: Encoder, with_noise: bool = True) -> EncoderOutput:
    if not latent_net.has_latent or latent_net.has_noise:
        raise ConfigError("L must have latent heads only")
    if not noise_net.has_noise or noise_net.has_latent:
        raise ConfigError("N must have noise heads only")
    if latent_net.config.resolution != noise_net.config.resolution:
        raise ShapeError("L and N disagree on input resolution")
    latent = latent_net(image, with_noise=False).latent
    noise = noise_net(image).noise if with_noise else None
    return EncoderOutput(latent=latent, noise=noise)
