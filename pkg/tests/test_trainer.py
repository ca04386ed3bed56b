import math

import numpy as np
import pytest
import torch

from stylenoise.core import ConfigError, module_digest
from stylenoise.data import synth_dataset
from stylenoise.decoder import build_decoder
from stylenoise.model import Autoencoder, build_encoder
from stylenoise.trainer import (
    TrainConfig,
    Trainer,
    TrainingDiverged,
    make_denoise_batch,
    run_strategy,
    schedule_lr,
)

from conftest import tiny_config


def model(kind="single", config=None):
    config = config or tiny_config()
    return Autoencoder(build_encoder(config, kind=kind, seed=1), build_decoder(config, seed=0))


@pytest.fixture(scope="module")
def data16():
    return synth_dataset("shapes", 8, 0, resolution=16)


def test_schedule_endpoints():
    cfg = TrainConfig(iterations=100, base_lr=1e-4)
    assert schedule_lr(0, cfg)["backbone"] == 1e-4
    assert schedule_lr(100, cfg)["backbone"] == 0.0
    assert math.isclose(schedule_lr(50, cfg)["noise"], 5e-5, rel_tol=1e-12)


def test_schedule_lr_split():
    cfg = TrainConfig(iterations=100, base_lr=1e-4, strategy="lr_split")
    s1, s2 = schedule_lr(10, cfg), schedule_lr(60, cfg)
    assert s1["noise"] == 0.0 and s1["backbone"] == s1["latent"] > 0
    assert math.isclose(s2["backbone"], s2["noise"] * 0.01)
    assert s2["latent"] == s2["backbone"]


def test_schedule_two_network():
    cfg = TrainConfig(iterations=100, strategy="two_network")
    assert cfg.stage_boundaries == (50,)
    assert schedule_lr(49, cfg)["noise_net"] == 0.0
    assert schedule_lr(50, cfg)["latent_net"] == 0.0
    assert schedule_lr(50, cfg)["noise_net"] > 0


@pytest.mark.parametrize("bad", [dict(lr_split_ratio=0.0), dict(lr_split_ratio=1.5),
                                 dict(strategy="lr_split", stage_boundaries=(10, 5)),
                                 dict(stage_boundaries=(200,)), dict(strategy="nope"),
                                 dict(denoise_sigmas=(-1.0,))])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        TrainConfig(iterations=100, **bad)


def test_strategy_encoder_mismatch():
    with pytest.raises(ConfigError):
        Trainer(model("single"), TrainConfig(strategy="two_network"))
    with pytest.raises(ConfigError):
        Trainer(model("two_network"), TrainConfig(strategy="plain"))


def test_decoder_digest_constant(data16):
    m = model()
    before = module_digest(m.decoder)
    trainer = Trainer(m, TrainConfig(iterations=10))
    x = data16.images[:4]
    for _ in range(10):
        trainer.train_step(x, x)
        assert module_digest(m.decoder) == before


def test_zero_lr_is_identity(data16):
    m = model()
    trainer = Trainer(m, TrainConfig(iterations=10, base_lr=0.0))
    before = module_digest(m.encoder)
    x = data16.images[:4]
    for _ in range(3):
        trainer.train_step(x, x)
    assert module_digest(m.encoder) == before


def test_overfit_loss_decreases(data16):
    torch.manual_seed(0)
    m = model(config=tiny_config(base_channels=8, max_channels=16))
    trainer = Trainer(m, TrainConfig(iterations=200, base_lr=1e-3))
    x = data16.images[:4]
    losses = np.array([trainer.train_step(x, x).loss for _ in range(200)])
    smooth = np.convolve(losses, np.ones(20) / 20, mode="valid")[::20]
    assert np.all(np.diff(smooth) < 0)


def test_lr_split_first_step_ratio(data16):
    m = model()
    cfg = TrainConfig(iterations=10, base_lr=1e-3, strategy="lr_split", stage_boundaries=(0,))
    trainer = Trainer(m, cfg)
    backbone = [p.detach().clone() for p in m.encoder.backbone_parameters()]
    noise = [p.detach().clone() for p in m.encoder.noise_parameters()]
    x = data16.images[:4]
    trainer.train_step(x, x)

    def step_size(before, params):
        # the first Adam step has magnitude lr wherever |grad| is far above eps
        deltas = []
        for b, p in zip(before, params):
            mask = p.grad.abs() > 1e-5
            deltas.append((p.detach() - b)[mask].abs())
        return torch.cat(deltas).mean().item()

    ratio = step_size(backbone, m.encoder.backbone_parameters()) / step_size(noise, m.encoder.noise_parameters())
    assert abs(ratio / 0.01 - 1) < 0.05


def test_two_network_stages(data16):
    m = model("two_network")
    cfg = TrainConfig(iterations=20, base_lr=1e-3, strategy="two_network")
    seen = {}

    def on_stage(trainer, stage):
        enc = trainer.model.encoder
        seen[stage] = (module_digest(enc.latent_net), module_digest(enc.noise_net))
        if stage == 1:
            x = data16.images[:2]
            out = trainer.forward(x, 1)
            latent = enc.latent_net(x, with_noise=False).latent
            with torch.no_grad():
                a = m.decoder(latent, trainer.disabled_noise(2))
                b = m.decoder(latent, trainer.disabled_noise(2))
            assert torch.equal(a, b)
            assert torch.equal(out.detach(), a)

    noise_init = module_digest(m.encoder.noise_net)
    run_strategy(m, cfg, data16, stage_callback=on_stage)
    assert seen[1][1] == noise_init  # N untouched in stage 1
    assert seen[2][0] == seen[1][0]  # L untouched in stage 2
    assert seen[2][1] != seen[1][1]


def test_two_network_stage1_noise_seed_invariant(data16):
    m = model("two_network")
    trainer = Trainer(m, TrainConfig(iterations=10, strategy="two_network"))
    x = data16.images[:2]
    outs = []
    for seed in (0, 1):
        torch.manual_seed(seed)
        with torch.no_grad():
            outs.append(trainer.forward(x, 1))
    assert torch.equal(outs[0], outs[1])


def test_reproducible(data16):
    def final():
        m = model()
        _, history = run_strategy(m, TrainConfig(iterations=15, base_lr=1e-3), data16)
        return history[-1].loss, module_digest(m.encoder)

    a, b = final(), final()
    assert abs(a[0] - b[0]) < 1e-6
    assert a[1] == b[1]


def test_non_finite_loss_aborts(data16):
    trainer = Trainer(model(), TrainConfig(iterations=10))
    x = data16.images[:2]
    with torch.no_grad():
        trainer.model.encoder.noise_heads[0].bias.fill_(float("inf"))
    with pytest.raises(TrainingDiverged, match="iteration 0"):
        trainer.train_step(x, x)


def test_training_log(tmp_path, data16):
    m = model()
    run_strategy(m, TrainConfig(iterations=5), data16, log_path=tmp_path / "log.csv")
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "iteration,stage,lr_backbone,lr_latent,lr_noise,loss,mse,perceptual"
    assert len(lines) == 6


def test_single_image_dataset():
    ds = synth_dataset("shapes", 1, 0, resolution=16)
    _, history = run_strategy(model(), TrainConfig(iterations=3), ds)
    assert len(history) == 3


def test_denoise_zero_sigma():
    clean = torch.rand(2, 3, 16, 16) * 2 - 1
    noisy, target = make_denoise_batch(clean, 0.0, 0)
    assert torch.equal(noisy, clean)
    assert target is clean


def test_denoise_std():
    assert math.isclose(2 * 25 / 255, 0.19608, abs_tol=1e-5)
    clean = torch.zeros(4, 3, 256, 256)
    noisy, _ = make_denoise_batch(clean, 25.0, 3)
    # zero images with std 0.196 almost never clip, so the pre-clip std is observable
    assert abs(noisy.std().item() / (2 * 25 / 255) - 1) < 0.02


def test_denoise_clips_and_is_deterministic():
    clean = torch.full((2, 3, 16, 16), 0.95)
    a, _ = make_denoise_batch(clean, 50.0, 1)
    b, _ = make_denoise_batch(clean, 50.0, 1)
    assert torch.equal(a, b)
    assert a.max().item() <= 1.0 and a.min().item() >= -1.0


def test_denoise_blind_draws_from_set():
    clean = torch.zeros(16, 3, 8, 8)
    _, _, sigmas = make_denoise_batch(clean, None, 0, sigma_set=(15.0, 25.0, 50.0), blind=True, return_sigmas=True)
    assert set(sigmas) <= {15.0, 25.0, 50.0}
    assert len(set(sigmas)) > 1


def test_denoise_negative_sigma():
    with pytest.raises(ValueError):
        make_denoise_batch(torch.zeros(1, 3, 8, 8), -1.0, 0)


def test_denoise_training_batches(data16):
    trainer = Trainer(model(), TrainConfig(iterations=2, denoise_sigmas=(25.0,)))
    inputs, targets = trainer.batch(data16, np.arange(4))
    assert torch.equal(targets, data16.images[:4])
    assert not torch.equal(inputs, targets)
