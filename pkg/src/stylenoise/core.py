"""Shared types, layout derivation, seeded initialization and checkpoint I/O.

Every shape in the package is derived from a single :class:`ModelConfig`.
Randomness is drawn from numpy's Philox counter-based generator keyed by
``(seed, *stream_keys)`` so results do not depend on draw order.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import zipfile
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import torch

DECODER_VERSIONS = ("v1", "v2")
PROJECTION_TARGETS = ("z", "wplus")
IMAGE_RANGE = (-1.0, 1.0)
DECODER_START_RES = 4

CHECKPOINT_FORMAT = "stylenoise-checkpoint"
CHECKPOINT_VERSION = 1
# zip members get a fixed timestamp so identical content gives identical bytes
_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


class ConfigError(ValueError):
    """Invalid configuration value or inconsistent combination of values."""


class ShapeError(ValueError):
    """A tensor or collection does not match the expected layout."""


class IncompatibleCheckpointError(ValueError):
    """A checkpoint was written for a different model configuration."""

    def __init__(self, field_name: str, expected: Any, found: Any):
        self.field_name = field_name
        self.expected = expected
        self.found = found
        super().__init__(
            f"checkpoint config mismatch on '{field_name}': "
            f"model has {expected!r}, checkpoint has {found!r}"
        )


class CheckpointFormatError(ValueError):
    """A checkpoint file is corrupt or not a checkpoint at all."""


def is_power_of_two(value: int) -> bool:
    return isinstance(value, int) and value > 0 and (value & (value - 1)) == 0


def log2_int(value: int) -> int:
    if not is_power_of_two(value):
        raise ConfigError(f"{value} is not a power of two")
    return value.bit_length() - 1


def philox(seed: int, *keys: int) -> np.random.Generator:
    """Return an independent Philox stream for ``(seed, *keys)``."""
    entropy = [int(seed) & 0xFFFFFFFF] + [int(k) & 0xFFFFFFFF for k in keys]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def name_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelConfig:
    resolution: int = 64
    latent_dim: int = 64
    decoder_version: str = "v2"
    projection_target: str = "wplus"
    base_channels: int = 32
    max_channels: int = 128
    encoder_out_size: int = 4
    mapping_layers: int = 8

    def __post_init__(self):
        if not is_power_of_two(self.resolution) or self.resolution < DECODER_START_RES:
            raise ConfigError(
                f"resolution must be a power of two >= {DECODER_START_RES}, got {self.resolution}"
            )
        if not is_power_of_two(self.encoder_out_size):
            raise ConfigError(f"encoder_out_size must be a power of two, got {self.encoder_out_size}")
        if self.encoder_out_size > self.resolution:
            raise ConfigError("encoder_out_size cannot exceed resolution")
        if self.decoder_version not in DECODER_VERSIONS:
            raise ConfigError(f"decoder_version must be one of {DECODER_VERSIONS}")
        if self.projection_target not in PROJECTION_TARGETS:
            raise ConfigError(f"projection_target must be one of {PROJECTION_TARGETS}")
        for name in ("latent_dim", "base_channels", "max_channels", "mapping_layers"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")

    def channels(self, res: int) -> int:
        """Feature channels at spatial size ``res``; shared by encoder and decoder."""
        return min(self.max_channels, self.base_channels * (self.resolution // res))

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, values: Mapping[str, Any]) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown ModelConfig keys: {sorted(unknown)}")
        return cls(**dict(values))


# ---------------------------------------------------------------------------
# layout
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NoiseSite:
    site_id: int
    height: int
    width: int


@dataclass(frozen=True)
class DecoderLayout:
    style_slots: int
    noise_spec: Tuple[NoiseSite, ...]
    resolutions: Tuple[int, ...]
    # feature resolution served by each style slot
    slot_resolutions: Tuple[int, ...]

    @property
    def num_sites(self) -> int:
        return len(self.noise_spec)

    def site_resolutions(self) -> List[int]:
        return [s.height for s in self.noise_spec]


def derive_layout(config: ModelConfig) -> DecoderLayout:
    """Style-slot and noise-site layout of the decoder built from ``config``.

    v2 has two modulated convolutions per resolution, each with its own style
    slot and noise site.  v1 has one style vector and one noise map per
    resolution, shared by both injection points of that resolution.
    """
    top = log2_int(config.resolution)
    start = log2_int(DECODER_START_RES)
    resolutions = tuple(2**k for k in range(start, top + 1))
    if config.decoder_version == "v2":
        per_res = [r for r in resolutions for _ in range(2)]
    else:
        per_res = list(resolutions)
    sites = tuple(NoiseSite(i, r, r) for i, r in enumerate(per_res))
    return DecoderLayout(
        style_slots=len(per_res),
        noise_spec=sites,
        resolutions=resolutions,
        slot_resolutions=tuple(per_res),
    )


# ---------------------------------------------------------------------------
# latent codes and noise maps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LatentCode:
    """Batched latent code.

    ``data`` is ``[B, n]`` for kind ``z``/``w`` and ``[B, S, n]`` for ``wplus``.
    """

    kind: str
    data: torch.Tensor

    def __post_init__(self):
        if self.kind not in ("z", "w", "wplus"):
            raise ShapeError(f"unknown latent kind {self.kind!r}")
        want = 3 if self.kind == "wplus" else 2
        if self.data.dim() != want:
            raise ShapeError(f"{self.kind} latent must have {want} dims, got {tuple(self.data.shape)}")

    @property
    def batch_size(self) -> int:
        return self.data.shape[0]

    def check(self, layout: DecoderLayout, latent_dim: int) -> None:
        if self.data.shape[-1] != latent_dim:
            raise ShapeError(f"latent width {self.data.shape[-1]} != {latent_dim}")
        if self.kind == "wplus" and self.data.shape[1] != layout.style_slots:
            raise ShapeError(
                f"W+ code has {self.data.shape[1]} rows, layout needs {layout.style_slots}"
            )
        if not torch.isfinite(self.data).all():
            raise ShapeError("latent code contains non-finite values")


@dataclass(frozen=True)
class NoiseMapSet:
    """Per-site noise maps, each ``[B, 1, h, w]``, ordered by site id."""

    maps: Tuple[torch.Tensor, ...]

    def __post_init__(self):
        object.__setattr__(self, "maps", tuple(self.maps))

    def __len__(self) -> int:
        return len(self.maps)

    def __getitem__(self, i: int) -> torch.Tensor:
        return self.maps[i]

    def check(self, layout: DecoderLayout, batch_size: Optional[int] = None) -> None:
        for site in layout.noise_spec:
            if site.site_id >= len(self.maps):
                raise ShapeError(
                    f"noise map missing for site {site.site_id} "
                    f"(got {len(self.maps)} maps, layout needs {layout.num_sites})"
                )
            m = self.maps[site.site_id]
            if m.dim() != 4 or m.shape[1] != 1 or tuple(m.shape[2:]) != (site.height, site.width):
                raise ShapeError(
                    f"noise map for site {site.site_id} has shape {tuple(m.shape)}, "
                    f"expected [B, 1, {site.height}, {site.width}]"
                )
            if batch_size is not None and m.shape[0] != batch_size:
                raise ShapeError(f"noise map for site {site.site_id} has batch {m.shape[0]} != {batch_size}")
        if len(self.maps) > layout.num_sites:
            raise ShapeError(f"got {len(self.maps)} noise maps, layout needs {layout.num_sites}")

    def map(self, fn) -> "NoiseMapSet":
        return NoiseMapSet(tuple(fn(m) for m in self.maps))

    @classmethod
    def zeros(cls, layout: DecoderLayout, batch_size: int, dtype=torch.float32) -> "NoiseMapSet":
        return cls(tuple(torch.zeros(batch_size, 1, s.height, s.width, dtype=dtype) for s in layout.noise_spec))


def check_image(image: torch.Tensor, resolution: Optional[int] = None) -> None:
    if image.dim() != 4 or image.shape[1] != 3:
        raise ShapeError(f"images must be [B, 3, H, W], got {tuple(image.shape)}")
    if resolution is not None and tuple(image.shape[2:]) != (resolution, resolution):
        raise ShapeError(f"image size {tuple(image.shape[2:])} does not match resolution {resolution}")


def clamp_image(image: torch.Tensor) -> torch.Tensor:
    return image.clamp(*IMAGE_RANGE)


# ---------------------------------------------------------------------------
# seeded initialization
# ---------------------------------------------------------------------------

# Initialization scheme, chosen by parameter name:
#   *.bias                     zeros
#   *affine.bias               ones (style affines start at identity modulation)
#   *.const                    normal(0, 1)
#   *.noise_strength           normal(0, 1)
#   4-D kernels                normal(0, 0.02)
#   2-D (fully connected)      normal(0, 1 / sqrt(fan_in))
CONV_INIT_STD = 0.02


def init_value(name: str, shape: Sequence[int], seed: int) -> np.ndarray:
    rng = philox(seed, name_key(name))
    shape = tuple(shape)
    if name.endswith("affine.bias"):
        return np.ones(shape, dtype=np.float32)
    if name.endswith(".bias"):
        return np.zeros(shape, dtype=np.float32)
    if name.endswith(".const") or name.endswith(".noise_strength"):
        return rng.standard_normal(shape, dtype=np.float32)
    if len(shape) == 4:
        return (rng.standard_normal(shape, dtype=np.float32) * CONV_INIT_STD).astype(np.float32)
    if len(shape) == 2:
        std = 1.0 / math.sqrt(shape[1])
        return (rng.standard_normal(shape, dtype=np.float32) * std).astype(np.float32)
    return (rng.standard_normal(shape, dtype=np.float32) * CONV_INIT_STD).astype(np.float32)


def init_module(module: torch.nn.Module, seed: int, prefix: str = "") -> Dict[str, np.ndarray]:
    """Fill every parameter of ``module`` in place; returns the parameter map."""
    params = {}
    with torch.no_grad():
        for name, p in module.named_parameters():
            value = init_value(prefix + name, p.shape, seed)
            p.copy_(torch.from_numpy(value))
            params[prefix + name] = value
    return params


def seed_init(config: ModelConfig, seed: int, component: str = "decoder") -> Dict[str, np.ndarray]:
    """Deterministic parameter map for ``component`` ('decoder' or 'encoder')."""
    if component == "decoder":
        from .decoder import Decoder

        module = Decoder(config)
    elif component == "encoder":
        from .encoder import Encoder

        module = Encoder(config)
    else:
        raise ConfigError(f"unknown component {component!r}")
    return init_module(module, seed, prefix=component + ".")


def module_params(module: torch.nn.Module, prefix: str = "") -> Dict[str, np.ndarray]:
    return {prefix + k: v.detach().cpu().numpy().copy() for k, v in module.state_dict().items()}


def load_module_params(module: torch.nn.Module, params: Mapping[str, np.ndarray], prefix: str = "") -> None:
    state = {}
    for key in module.state_dict():
        full = prefix + key
        if full not in params:
            raise CheckpointFormatError(f"parameter {full!r} missing from checkpoint")
        state[key] = torch.from_numpy(np.asarray(params[full]).copy())
    module.load_state_dict(state)


def params_digest(params: Mapping[str, Any]) -> str:
    """SHA-256 over names, dtypes, shapes and raw bytes of a parameter map."""
    h = hashlib.sha256()
    for name in sorted(params):
        value = params[name]
        if isinstance(value, torch.Tensor):
            value = value.detach().cpu().numpy()
        arr = np.ascontiguousarray(value)
        h.update(name.encode())
        h.update(str(arr.dtype).encode())
        h.update(repr(arr.shape).encode())
        h.update(arr.tobytes())
    return h.hexdigest()


def module_digest(module: torch.nn.Module) -> str:
    return params_digest(dict(module.state_dict()))


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


@dataclass
class Checkpoint:
    config: ModelConfig
    params: Dict[str, np.ndarray]
    meta: Dict[str, Any] = field(default_factory=dict)

    def subset(self, prefix: str) -> Dict[str, np.ndarray]:
        return {k: v for k, v in self.params.items() if k.startswith(prefix)}

    def has(self, prefix: str) -> bool:
        return any(k.startswith(prefix) for k in self.params)


def check_config_match(expected: ModelConfig, found: ModelConfig) -> None:
    for f in dataclasses.fields(ModelConfig):
        a, b = getattr(expected, f.name), getattr(found, f.name)
        if a != b:
            raise IncompatibleCheckpointError(f.name, a, b)


def _zip_write(zf: zipfile.ZipFile, name: str, data: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_ZIP_EPOCH)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def save_checkpoint(path, checkpoint: Checkpoint) -> None:
    """Write ``checkpoint`` as a zip archive.

    Members: ``config.json`` (flat ModelConfig keys), ``meta.json``,
    ``index.json`` (name -> member, dtype, shape, sha256) and one raw
    little-endian ``arrays/<k>.bin`` per parameter.
    """
    path = Path(path)
    index = []
    blobs = []
    for k, name in enumerate(sorted(checkpoint.params)):
        arr = np.ascontiguousarray(checkpoint.params[name])
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = arr.tobytes()
        member = f"arrays/{k:05d}.bin"
        index.append(
            {
                "name": name,
                "member": member,
                "dtype": arr.dtype.str,
                "shape": list(arr.shape),
                "sha256": hashlib.sha256(raw).hexdigest(),
            }
        )
        blobs.append((member, raw))
    header = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION, "arrays": index}
    with zipfile.ZipFile(path, "w") as zf:
        _zip_write(zf, "config.json", json.dumps(checkpoint.config.to_dict(), indent=2, sort_keys=True).encode())
        _zip_write(zf, "meta.json", json.dumps(checkpoint.meta, indent=2, sort_keys=True).encode())
        _zip_write(zf, "index.json", json.dumps(header, indent=2).encode())
        for member, raw in blobs:
            _zip_write(zf, member, raw)


def load_checkpoint(path, expect: Optional[ModelConfig] = None) -> Checkpoint:
    path = Path(path)
    try:
        with zipfile.ZipFile(path) as zf:
            config = ModelConfig.from_dict(json.loads(zf.read("config.json")))
            meta = json.loads(zf.read("meta.json"))
            header = json.loads(zf.read("index.json"))
            if header.get("format") != CHECKPOINT_FORMAT:
                raise CheckpointFormatError(f"{path}: not a {CHECKPOINT_FORMAT} archive")
            params = {}
            for entry in header["arrays"]:
                raw = zf.read(entry["member"])
                if hashlib.sha256(raw).hexdigest() != entry["sha256"]:
                    raise CheckpointFormatError(f"{path}: checksum mismatch for {entry['name']}")
                arr = np.frombuffer(raw, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"])
                params[entry["name"]] = arr.astype(arr.dtype.newbyteorder("="), copy=True)
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError, ValueError) as exc:
        if isinstance(exc, (CheckpointFormatError, ConfigError)):
            raise
        raise CheckpointFormatError(f"{path}: cannot parse checkpoint ({exc})") from exc
    if expect is not None:
        check_config_match(expect, config)
    return Checkpoint(config=config, params=params, meta=meta)


def read_config_file(path) -> Dict[str, Any]:
    """Flat JSON object of config keys."""
    with open(path) as fh:
        values = json.load(fh)
    if not isinstance(values, dict) or any(isinstance(v, dict) for v in values.values()):
        raise ConfigError(f"{path}: config must be a flat key-value object")
    return values


def split_config(values: Mapping[str, Any]) -> Tuple[ModelConfig, Dict[str, Any]]:
    """Split a flat config mapping into a ModelConfig and the remaining keys."""
    names = {f.name for f in dataclasses.fields(ModelConfig)}
    model = ModelConfig.from_dict({k: v for k, v in values.items() if k in names})
    rest = {k: v for k, v in values.items() if k not in names}
    return model, rest
