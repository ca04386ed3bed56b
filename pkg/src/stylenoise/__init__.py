"""Encoders that invert frozen style-based generators into latent codes and noise maps."""
from .core import (
    Checkpoint,
    CheckpointFormatError,
    ConfigError,
    DecoderLayout,
    IncompatibleCheckpointError,
    LatentCode,
    ModelConfig,
    NoiseMapSet,
    ShapeError,
    derive_layout,
    load_checkpoint,
    save_checkpoint,
    seed_init,
)
from .decoder import Decoder, broadcast_w, build_decoder, map_latent, sample_noise, synthesize
from .encoder import Encoder, EncoderOutput, TwoNetworkEncoder, encode, encode_two_network, num_blocks
from .model import Autoencoder, build_encoder

__version__ = "0.1.0"

__all__ = [
    "Checkpoint",
    "CheckpointFormatError",
    "ConfigError",
    "DecoderLayout",
    "IncompatibleCheckpointError",
    "LatentCode",
    "ModelConfig",
    "NoiseMapSet",
    "ShapeError",
    "derive_layout",
    "load_checkpoint",
    "save_checkpoint",
    "seed_init",
    "Decoder",
    "broadcast_w",
    "build_decoder",
    "map_latent",
    "sample_noise",
    "synthesize",
    "Encoder",
    "EncoderOutput",
    "TwoNetworkEncoder",
    "encode",
    "encode_two_network",
    "num_blocks",
    "Autoencoder",
    "build_encoder",
]
