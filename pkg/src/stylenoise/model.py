"""Encoder + frozen decoder bundle and its checkpoint mapping."""
from __future__ import annotations

from typing import Optional, Union

import torch

from .core import (
    Checkpoint,
    ConfigError,
    LatentCode,
    ModelConfig,
    NoiseMapSet,
    init_module,
    load_module_params,
    module_params,
)
from .decoder import Decoder, build_decoder, sample_noise
from .encoder import Encoder, EncoderOutput, TwoNetworkEncoder

ENCODER_KINDS = ("single", "two_network")


def build_encoder(config: ModelConfig, kind: str = "single", seed: int = 1) -> Union[Encoder, TwoNetworkEncoder]:
    if kind == "single":
        encoder = Encoder(config)
    elif kind == "two_network":
        encoder = TwoNetworkEncoder(config)
    else:
        raise ConfigError(f"unknown encoder kind {kind!r}")
    init_module(encoder, seed, prefix="encoder.")
    return encoder


def encoder_kind(encoder) -> str:
    return "two_network" if isinstance(encoder, TwoNetworkEncoder) else "single"


class Autoencoder:
    """Trainable encoder in front of a frozen decoder."""

    def __init__(self, encoder, decoder: Decoder):
        if encoder.config != decoder.config:
            raise ConfigError("encoder and decoder were built from different configs")
        self.encoder = encoder
        self.decoder = decoder
        self.config = decoder.config
        self.layout = decoder.layout

    def encode(self, image: torch.Tensor, with_noise: bool = True) -> EncoderOutput:
        return self.encoder(image, with_noise=with_noise)

    def styles(self, latent: LatentCode) -> LatentCode:
        return self.decoder.to_wplus(latent)

    def decode(self, latent: LatentCode, noise: Optional[NoiseMapSet]) -> torch.Tensor:
        if noise is None:
            noise = NoiseMapSet.zeros(self.layout, latent.batch_size)
        return self.decoder(latent, noise)

    @torch.no_grad()
    def reconstruct(self, image: torch.Tensor, use_noise: bool = True) -> torch.Tensor:
        """Clamped reconstructions; images are processed one at a time for bit-stable output."""
        frames = []
        for x in image:
            out = self.encode(x[None], with_noise=use_noise)
            frames.append(self.decode(out.latent, out.noise if use_noise else None).clamp(-1, 1))
        return torch.cat(frames)

    def random_noise(self, seed: int, batch_size: int = 1) -> NoiseMapSet:
        return sample_noise(self.layout, seed, batch_size)

    def to_checkpoint(self, meta: Optional[dict] = None) -> Checkpoint:
        params = module_params(self.decoder, "decoder.")
        params.update(module_params(self.encoder, "encoder."))
        info = {"encoder_kind": encoder_kind(self.encoder)}
        info.update(meta or {})
        return Checkpoint(config=self.config, params=params, meta=info)

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint, encoder_kind: Optional[str] = None, encoder_seed: int = 1) -> "Autoencoder":
        """Decoder from the checkpoint; encoder from it too when present, else freshly seeded."""
        decoder = build_decoder(ckpt.config, params=ckpt.params)
        kind = encoder_kind or ckpt.meta.get("encoder_kind", "single")
        encoder = build_encoder(ckpt.config, kind, seed=encoder_seed)
        if ckpt.has("encoder."):
            stored = ckpt.meta.get("encoder_kind", "single")
            if stored != kind:
                raise ConfigError(f"checkpoint holds a {stored} encoder, {kind} was requested")
            load_module_params(encoder, ckpt.params, prefix="encoder.")
        return cls(encoder, decoder)
