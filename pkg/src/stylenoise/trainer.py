"""Encoder training against a frozen decoder.

Strategies:

* ``plain``        one stage, every head trained.
* ``two_network``  stage 1 trains the latent network L with noise disabled,
                   stage 2 freezes L and trains the noise network N.
* ``lr_split``     stage 1 trains backbone + latent heads with noise disabled,
                   stage 2 trains everything, backbone + latent heads at
                   ``lr_split_ratio`` times the scheduled rate.

"Noise disabled" feeds the decoder all-zero maps (or a fixed seeded draw when
``stage1_noise == "fixed"``).
"""
from __future__ import annotations

import csv
import dataclasses
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch

from .core import ConfigError, NoiseMapSet, module_digest, philox, save_checkpoint
from .data import Dataset
from .decoder import sample_noise
from .encoder import TwoNetworkEncoder
from .losses import FeatureExtractor, mse_loss, perceptual_loss, proxy_extractor
from .model import Autoencoder

log = logging.getLogger(__name__)

STRATEGIES = ("plain", "two_network", "lr_split")
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
DEFAULT_SIGMAS = (15.0, 25.0, 50.0)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    iterations: int = 2000
    batch_size: int = 4
    base_lr: float = 1e-4
    strategy: str = "plain"
    lr_split_ratio: float = 0.01
    # empty -> a single boundary at iterations // 2 for the two-stage strategies
    stage_boundaries: Tuple[int, ...] = ()
    denoise_sigmas: Optional[Tuple[float, ...]] = None
    denoise_blind: bool = True
    stage1_noise: str = "zero"
    seed: int = 0
    log_every: int = 50
    checkpoint_every: int = 0

    def __post_init__(self):
        self.strategy = self.strategy.replace("-", "_")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.iterations < 1 or self.batch_size < 1:
            raise ConfigError("iterations and batch_size must be positive")
        if not 0 < self.lr_split_ratio <= 1:
            raise ConfigError("lr_split_ratio must lie in (0, 1]")
        if self.stage1_noise not in ("zero", "fixed"):
            raise ConfigError("stage1_noise must be 'zero' or 'fixed'")
        self.stage_boundaries = tuple(int(b) for b in self.stage_boundaries)
        if self.strategy != "plain" and not self.stage_boundaries:
            self.stage_boundaries = (self.iterations // 2,)
        bounds = self.stage_boundaries
        if any(b2 <= b1 for b1, b2 in zip(bounds, bounds[1:])) or any(b < 0 or b > self.iterations for b in bounds):
            raise ConfigError("stage boundaries must be strictly increasing and within [0, iterations]")
        if self.strategy != "plain" and len(bounds) != 1:
            raise ConfigError(f"{self.strategy} takes exactly one stage boundary")
        if self.denoise_sigmas is not None:
            self.denoise_sigmas = tuple(float(s) for s in self.denoise_sigmas)
            if not self.denoise_sigmas or min(self.denoise_sigmas) < 0:
                raise ConfigError("denoise sigmas must be a non-empty list of values >= 0")

    @classmethod
    def from_dict(cls, values) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown training keys: {sorted(unknown)}")
        values = dict(values)
        for key in ("stage_boundaries", "denoise_sigmas"):
            if values.get(key) is not None:
                values[key] = tuple(values[key])
        return cls(**values)

    def stage(self, t: int) -> int:
        if self.strategy == "plain":
            return 1
        return 1 if t < self.stage_boundaries[0] else 2


def cosine_factor(t: int, total: int) -> float:
    return (1.0 + math.cos(math.pi * t / total)) / 2.0


def group_names(strategy: str) -> Tuple[str, ...]:
    return ("latent_net", "noise_net") if strategy == "two_network" else ("backbone", "latent", "noise")


def schedule_lr(t: int, cfg: TrainConfig) -> Dict[str, float]:
    """Learning rate of every parameter group at iteration ``t``."""
    lr = cfg.base_lr * cosine_factor(t, cfg.iterations)
    stage = cfg.stage(t)
    if cfg.strategy == "plain":
        return {"backbone": lr, "latent": lr, "noise": lr}
    if cfg.strategy == "lr_split":
        if stage == 1:
            return {"backbone": lr, "latent": lr, "noise": 0.0}
        slow = lr * cfg.lr_split_ratio
        return {"backbone": slow, "latent": slow, "noise": lr}
    if stage == 1:
        return {"latent_net": lr, "noise_net": 0.0}
    return {"latent_net": 0.0, "noise_net": lr}


def make_denoise_batch(
    clean: torch.Tensor,
    sigma: Optional[float],
    seed: int,
    sigma_set: Optional[Sequence[float]] = None,
    blind: bool = False,
    return_sigmas: bool = False,
):
    """Add white Gaussian noise of std ``2*sigma/255`` (sigma on the 0-255 scale) and clip.

    With ``blind`` each sample draws its sigma uniformly from ``sigma_set``.
    Sample ``j`` uses the Philox stream ``(seed, j)``.
    """
    if blind:
        if not sigma_set:
            raise ValueError("blind mode needs a sigma set")
        if min(sigma_set) < 0:
            raise ValueError("sigma must be >= 0")
    elif sigma is None or sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    noisy, sigmas = [], []
    for j, img in enumerate(clean):
        rng = philox(seed, 0xD0, j)
        s = float(sigma_set[int(rng.integers(len(sigma_set)))]) if blind else float(sigma)
        sigmas.append(s)
        if s == 0.0:
            noisy.append(img.clone())
            continue
        g = torch.from_numpy(rng.standard_normal(tuple(img.shape), dtype=np.float32)).to(img.dtype)
        noisy.append((img + g * (2.0 * s / 255.0)).clamp(-1.0, 1.0))
    noisy = torch.stack(noisy)
    if return_sigmas:
        return noisy, clean, sigmas
    return noisy, clean


@dataclass
class StepResult:
    iteration: int
    stage: int
    loss: float
    mse: float
    perceptual: float
    lrs: Dict[str, float]


class Trainer:
    def __init__(self, model: Autoencoder, cfg: TrainConfig, extractor: Optional[FeatureExtractor] = None):
        self.model = model
        self.cfg = cfg
        self.extractor = extractor if extractor is not None else proxy_extractor()
        encoder = model.encoder
        two = isinstance(encoder, TwoNetworkEncoder)
        if (cfg.strategy == "two_network") != two:
            raise ConfigError(f"strategy {cfg.strategy} does not match a {type(encoder).__name__}")
        model.decoder.freeze()
        self.decoder_digest = module_digest(model.decoder)
        if two:
            groups = {"latent_net": list(encoder.latent_net.parameters()), "noise_net": list(encoder.noise_net.parameters())}
        else:
            groups = {
                "backbone": list(encoder.backbone_parameters()),
                "latent": list(encoder.latent_parameters()),
                "noise": list(encoder.noise_parameters()),
            }
        self.optimizer = torch.optim.Adam(
            [{"params": p, "name": name} for name, p in groups.items() if p],
            lr=cfg.base_lr,
            betas=ADAM_BETAS,
            eps=ADAM_EPS,
        )
        self.iteration = 0
        self._fixed_noise = None

    # -- helpers ---------------------------------------------------------

    def noise_enabled(self, stage: int) -> bool:
        return self.cfg.strategy == "plain" or stage == 2

    def disabled_noise(self, batch_size: int) -> NoiseMapSet:
        if self.cfg.stage1_noise == "zero":
            return NoiseMapSet.zeros(self.model.layout, batch_size)
        if self._fixed_noise is None:
            self._fixed_noise = sample_noise(self.model.layout, self.cfg.seed, 1)
        return self._fixed_noise.map(lambda m: m.expand(batch_size, -1, -1, -1))

    def forward(self, inputs: torch.Tensor, stage: int) -> torch.Tensor:
        encoder = self.model.encoder
        use_noise = self.noise_enabled(stage)
        if self.cfg.strategy == "two_network" and stage == 2:
            with torch.no_grad():
                latent = encoder.latent_net(inputs, with_noise=False).latent
            noise = encoder.noise_net(inputs).noise
        else:
            out = encoder(inputs, with_noise=use_noise)
            latent, noise = out.latent, out.noise
        if not use_noise:
            noise = self.disabled_noise(inputs.shape[0])
        return self.model.decoder(latent, noise)

    def _apply_lrs(self, lrs: Dict[str, float]) -> None:
        for group in self.optimizer.param_groups:
            group["lr"] = lrs[group["name"]]

    # -- training --------------------------------------------------------

    def train_step(self, inputs: torch.Tensor, targets: torch.Tensor) -> StepResult:
        t = self.iteration
        stage = self.cfg.stage(t)
        lrs = schedule_lr(min(t, self.cfg.iterations), self.cfg)
        self._apply_lrs(lrs)
        self.model.encoder.train()
        output = self.forward(inputs, stage)
        mse = mse_loss(output, targets)
        perc = perceptual_loss(output, targets, self.extractor)
        loss = mse + perc
        if not torch.isfinite(loss):
            raise TrainingDiverged(
                f"non-finite loss at iteration {t}: lr={lrs}, mse={mse.item()}, perceptual={perc.item()}"
            )
        self.optimizer.zero_grad(set_to_none=True)
        loss.backward()
        for group in self.optimizer.param_groups:
            if group["lr"] == 0.0:
                # frozen groups keep their parameters and Adam moments untouched
                for p in group["params"]:
                    p.grad = None
        self.optimizer.step()
        self.iteration += 1
        return StepResult(t, stage, loss.item(), mse.item(), perc.item(), lrs)

    def batch(self, dataset: Dataset, indices: np.ndarray) -> Tuple[torch.Tensor, torch.Tensor]:
        clean = dataset.images[torch.from_numpy(indices)]
        if self.cfg.denoise_sigmas is None:
            return clean, clean
        seed = int(philox(self.cfg.seed, 0xBA7C, self.iteration).integers(2**31))
        sigmas = self.cfg.denoise_sigmas
        if self.cfg.denoise_blind:
            return make_denoise_batch(clean, None, seed, sigma_set=sigmas, blind=True)
        return make_denoise_batch(clean, sigmas[0], seed)

    def run(
        self,
        dataset: Dataset,
        log_path=None,
        checkpoint_dir=None,
        stage_callback=None,
    ) -> List[StepResult]:
        """Train until ``cfg.iterations``; returns the per-step history.

        ``stage_callback(trainer, stage)`` fires after the last step of each stage.
        """
        history: List[StepResult] = []
        batches = dataset.batches(self.cfg.batch_size, self.cfg.seed)
        # skip batches already consumed when resuming
        for _ in range(self.iteration):
            next(batches)
        writer = fh = None
        if log_path is not None:
            fh = open(log_path, "w", newline="")
            writer = csv.writer(fh)
            writer.writerow(["iteration", "stage"] + [f"lr_{g}" for g in group_names(self.cfg.strategy)] + ["loss", "mse", "perceptual"])
        try:
            while self.iteration < self.cfg.iterations:
                inputs, targets = self.batch(dataset, next(batches))
                res = self.train_step(inputs, targets)
                history.append(res)
                if writer is not None:
                    writer.writerow(
                        [res.iteration, res.stage]
                        + [f"{res.lrs[g]:.6g}" for g in group_names(self.cfg.strategy)]
                        + [f"{res.loss:.6g}", f"{res.mse:.6g}", f"{res.perceptual:.6g}"]
                    )
                if self.cfg.log_every and res.iteration % self.cfg.log_every == 0:
                    log.info("it %d stage %d loss %.5f (mse %.5f, perc %.5f)", res.iteration, res.stage, res.loss, res.mse, res.perceptual)
                if checkpoint_dir is not None and self.cfg.checkpoint_every and self.iteration % self.cfg.checkpoint_every == 0:
                    save_checkpoint(Path(checkpoint_dir) / f"step{self.iteration:07d}.ckpt", self.checkpoint())
                ended_stage = self.iteration == self.cfg.iterations or self.cfg.stage(self.iteration) != res.stage
                if stage_callback is not None and ended_stage:
                    stage_callback(self, res.stage)
        finally:
            if fh is not None:
                fh.close()
        if module_digest(self.model.decoder) != self.decoder_digest:
            raise RuntimeError("decoder parameters changed during training")
        return history

    def checkpoint(self):
        return self.model.to_checkpoint(
            {
                "iteration": self.iteration,
                "stage": self.cfg.stage(max(self.iteration - 1, 0)),
                "strategy": self.cfg.strategy,
                "seed": self.cfg.seed,
                "decoder_digest": self.decoder_digest,
            }
        )


def run_strategy(model: Autoencoder, cfg: TrainConfig, dataset: Dataset, extractor=None, **kwargs):
    """Train ``model`` with ``cfg.strategy``; returns (trainer, history)."""
    trainer = Trainer(model, cfg, extractor)
    history = trainer.run(dataset, **kwargs)
    return trainer, history
