"""Frozen style-based generator used as the decoder.

Block micro-architecture (pinned defaults):

=====================  ==========================================
item                   value
=====================  ==========================================
kernel size            3x3 (1x1 for to-RGB)
kernel runtime gain    1 / (0.02 * sqrt(fan_in)) (equalized scaling)
upsampling             bilinear x2, before the first conv of a block
leaky ReLU slope       0.2
demodulation epsilon   1e-8
noise strength         one learned scalar per channel per injection
mapping network        pixel norm + ``mapping_layers`` FC + lrelu
v2 output              skip architecture: to-RGB at every resolution
v1 output              unmodulated 1x1 to-RGB at the last resolution
=====================  ==========================================

v2 has two style slots and two noise sites per resolution (4x4 included).
v1 has one style vector and one noise map per resolution; the two
injection points of a resolution share them.
"""
from __future__ import annotations

import math
from typing import Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .core import (
    CONV_INIT_STD,
    DECODER_START_RES,
    DecoderLayout,
    LatentCode,
    ModelConfig,
    NoiseMapSet,
    ShapeError,
    derive_layout,
    philox,
)

LRELU_SLOPE = 0.2
DEMOD_EPS = 1e-8
ADAIN_EPS = 1e-8
PIXELNORM_EPS = 1e-8


def kernel_gain(weight: torch.Tensor) -> float:
    """Runtime scale giving stored N(0, 0.02) kernels an effective std of 1/sqrt(fan_in)."""
    fan_in = weight.shape[1] * weight.shape[2] * weight.shape[3]
    return 1.0 / (CONV_INIT_STD * math.sqrt(fan_in))


class MappingNetwork(nn.Module):
    def __init__(self, latent_dim: int, num_layers: int = 8):
        super().__init__()
        self.latent_dim = latent_dim
        self.layers = nn.ModuleList(nn.Linear(latent_dim, latent_dim) for _ in range(num_layers))

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        x = z * torch.rsqrt(z.pow(2).mean(dim=1, keepdim=True) + PIXELNORM_EPS)
        for layer in self.layers:
            x = F.leaky_relu(layer(x), LRELU_SLOPE)
        return x


class ModulatedConv(nn.Module):
    """Style-modulated convolution with optional demodulation (v2)."""

    def __init__(self, in_ch, out_ch, kernel_size, latent_dim, demodulate=True, upsample=False):
        super().__init__()
        self.in_ch, self.out_ch = in_ch, out_ch
        self.kernel_size = kernel_size
        self.demodulate = demodulate
        self.upsample = upsample
        self.weight = nn.Parameter(torch.empty(out_ch, in_ch, kernel_size, kernel_size))
        self.affine = nn.Linear(latent_dim, in_ch)

    def modulated_weight(self, w: torch.Tensor) -> torch.Tensor:
        """Per-sample kernels ``[B, out, in, k, k]``."""
        style = self.affine(w)
        weight = self.weight[None] * (kernel_gain(self.weight) * style[:, None, :, None, None])
        if self.demodulate:
            d = torch.rsqrt(weight.pow(2).sum(dim=(2, 3, 4)) + DEMOD_EPS)
            weight = weight * d[:, :, None, None, None]
        return weight

    def forward(self, x: torch.Tensor, w: torch.Tensor) -> torch.Tensor:
        if self.upsample:
            x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
        b, c, h, wd = x.shape
        weight = self.modulated_weight(w).reshape(b * self.out_ch, c, self.kernel_size, self.kernel_size)
        out = F.conv2d(x.reshape(1, b * c, h, wd), weight, padding=self.kernel_size // 2, groups=b)
        return out.reshape(b, self.out_ch, h, wd)


class NoiseInjection(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.noise_strength = nn.Parameter(torch.empty(channels))

    def forward(self, x: torch.Tensor, noise: torch.Tensor) -> torch.Tensor:
        return x + self.noise_strength[None, :, None, None] * noise


class StyledConvV2(nn.Module):
    def __init__(self, in_ch, out_ch, latent_dim, upsample=False):
        super().__init__()
        self.conv = ModulatedConv(in_ch, out_ch, 3, latent_dim, demodulate=True, upsample=upsample)
        self.noise = NoiseInjection(out_ch)
        self.bias = nn.Parameter(torch.empty(out_ch))

    def forward(self, x, w, noise):
        x = self.noise(self.conv(x, w), noise)
        return F.leaky_relu(x + self.bias[None, :, None, None], LRELU_SLOPE)


class ToRGB(nn.Module):
    def __init__(self, in_ch, latent_dim):
        super().__init__()
        self.conv = ModulatedConv(in_ch, 3, 1, latent_dim, demodulate=False)
        self.bias = nn.Parameter(torch.empty(3))

    def forward(self, x, w, skip=None):
        out = self.conv(x, w) + self.bias[None, :, None, None]
        if skip is not None:
            out = out + F.interpolate(skip, scale_factor=2, mode="bilinear", align_corners=False)
        return out


class AdaIN(nn.Module):
    """Instance-normalize each channel, then scale and shift it by the style."""

    def __init__(self, channels, latent_dim):
        super().__init__()
        self.channels = channels
        # rows [:C] are the scale, rows [C:] the shift
        self.affine = nn.Linear(latent_dim, 2 * channels)

    def forward(self, x, w):
        style = self.affine(w)
        return adain(x, style[:, : self.channels], style[:, self.channels :])


def adain(x: torch.Tensor, scale: torch.Tensor, shift: torch.Tensor) -> torch.Tensor:
    mean = x.mean(dim=(2, 3), keepdim=True)
    var = x.var(dim=(2, 3), keepdim=True, unbiased=False)
    x = (x - mean) * torch.rsqrt(var + ADAIN_EPS)
    return x * scale[:, :, None, None] + shift[:, :, None, None]


class StyledConvV1(nn.Module):
    def __init__(self, in_ch, out_ch, latent_dim, upsample=False):
        super().__init__()
        self.upsample = upsample
        self.weight = nn.Parameter(torch.empty(out_ch, in_ch, 3, 3))
        self.bias = nn.Parameter(torch.empty(out_ch))
        self.noise = NoiseInjection(out_ch)
        self.adain = AdaIN(out_ch, latent_dim)

    def forward(self, x, w, noise):
        if self.upsample:
            x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
        x = F.conv2d(x, self.weight * kernel_gain(self.weight), padding=1)
        x = self.noise(x, noise) + self.bias[None, :, None, None]
        return self.adain(F.leaky_relu(x, LRELU_SLOPE), w)


class ConstantInput(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.const = nn.Parameter(torch.empty(1, channels, DECODER_START_RES, DECODER_START_RES))

    def forward(self, batch_size):
        return self.const.expand(batch_size, -1, -1, -1)


class SynthesisNetwork(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.layout = derive_layout(config)
        self.version = config.decoder_version
        n = config.latent_dim
        res_list = self.layout.resolutions
        self.input = ConstantInput(config.channels(DECODER_START_RES))
        self.convs = nn.ModuleList()
        self.to_rgbs = nn.ModuleList()
        block = StyledConvV2 if self.version == "v2" else StyledConvV1
        in_ch = config.channels(DECODER_START_RES)
        for res in res_list:
            out_ch = config.channels(res)
            self.convs.append(block(in_ch, out_ch, n, upsample=res > DECODER_START_RES))
            self.convs.append(block(out_ch, out_ch, n))
            if self.version == "v2":
                self.to_rgbs.append(ToRGB(out_ch, n))
            in_ch = out_ch
        if self.version == "v1":
            self.to_rgb = nn.Conv2d(in_ch, 3, 1)
            self.rgb_gain = kernel_gain(self.to_rgb.weight)

    def _slot_and_site(self, conv_index: int) -> int:
        # v2: conv i uses slot i / site i; v1: both convs of a resolution share one
        return conv_index if self.version == "v2" else conv_index // 2

    def forward(self, styles: torch.Tensor, noise: NoiseMapSet) -> torch.Tensor:
        x = self.input(styles.shape[0])
        rgb = None
        for i, conv in enumerate(self.convs):
            k = self._slot_and_site(i)
            x = conv(x, styles[:, k], noise[k])
            if self.version == "v2" and i % 2 == 1:
                rgb = self.to_rgbs[i // 2](x, styles[:, k], rgb)
        if self.version == "v1":
            rgb = F.conv2d(x, self.to_rgb.weight * self.rgb_gain, self.to_rgb.bias)
        return rgb


class Decoder(nn.Module):
    """Mapping network plus synthesis network; never trained here."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.layout = derive_layout(config)
        self.mapping = MappingNetwork(config.latent_dim, config.mapping_layers)
        self.synthesis = SynthesisNetwork(config)

    def map_latent(self, z: LatentCode) -> LatentCode:
        if z.kind != "z":
            raise ShapeError(f"map_latent expects a z code, got {z.kind}")
        if z.data.shape[-1] != self.config.latent_dim:
            raise ShapeError(f"z has length {z.data.shape[-1]}, expected {self.config.latent_dim}")
        return LatentCode("w", self.mapping(z.data))

    def to_wplus(self, latent: LatentCode) -> LatentCode:
        if latent.kind == "z":
            latent = self.map_latent(latent)
        if latent.kind == "w":
            latent = broadcast_w(latent, self.layout)
        return latent

    def synthesize(self, styles: LatentCode, noise: NoiseMapSet) -> torch.Tensor:
        """Raw (unclamped) images ``[B, 3, R, R]``; differentiable in styles and noise."""
        if styles.kind != "wplus":
            raise ShapeError(f"synthesize expects a W+ code, got {styles.kind}")
        styles.check(self.layout, self.config.latent_dim)
        noise.check(self.layout, styles.batch_size)
        return self.synthesis(styles.data, noise)

    def forward(self, latent: LatentCode, noise: NoiseMapSet) -> torch.Tensor:
        return self.synthesize(self.to_wplus(latent), noise)

    def freeze(self) -> "Decoder":
        self.eval()
        for p in self.parameters():
            p.requires_grad_(False)
        return self


def map_latent(decoder: Decoder, z: LatentCode) -> LatentCode:
    return decoder.map_latent(z)


def broadcast_w(w: LatentCode, layout: DecoderLayout) -> LatentCode:
    if w.kind != "w":
        raise ShapeError(f"broadcast_w expects a w code, got {w.kind}")
    data = w.data[:, None, :].expand(-1, layout.style_slots, -1).contiguous()
    return LatentCode("wplus", data)


def synthesize(decoder: Decoder, styles: LatentCode, noise: NoiseMapSet) -> torch.Tensor:
    return decoder.synthesize(styles, noise)


def sample_noise(layout: DecoderLayout, seed: int, batch_size: int = 1, dtype=torch.float32) -> NoiseMapSet:
    """Standard-normal noise maps; site ``k`` draws from stream ``(seed, k)``."""
    maps = []
    for site in layout.noise_spec:
        rng = philox(seed, 0x6E6F, site.site_id)
        arr = rng.standard_normal((batch_size, 1, site.height, site.width), dtype=np.float32)
        maps.append(torch.from_numpy(arr).to(dtype))
    return NoiseMapSet(tuple(maps))


def build_decoder(config: ModelConfig, seed: Optional[int] = None, params=None) -> Decoder:
    """A frozen decoder, either freshly seeded or loaded from a parameter map."""
    from .core import init_module, load_module_params

    decoder = Decoder(config)
    if params is not None:
        load_module_params(decoder, params, prefix="decoder.")
    else:
        init_module(decoder, 0 if seed is None else seed, prefix="decoder.")
    return decoder.freeze()
