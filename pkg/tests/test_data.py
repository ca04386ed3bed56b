import logging

import numpy as np
import pytest
import torch
from PIL import Image

from stylenoise.core import ConfigError, ModelConfig
from stylenoise.data import load_dataset, resolve_dataset, synth_dataset

R64 = ModelConfig(resolution=64)


def write(path, size, color=(10, 200, 30)):
    Image.new("RGB", size, color).save(path)


def test_mixed_size_folder(tmp_path):
    sizes = [(64, 64), (100, 40), (17, 90), (128, 128), (30, 30), (64, 32), (200, 10), (5, 5), (70, 71), (99, 100)]
    for i, size in enumerate(sizes):
        write(tmp_path / f"img{i:02d}.png", size, color=(i * 20, 100, 255 - i * 20))
    ds = load_dataset(tmp_path, R64)
    assert ds.images.shape == (10, 3, 64, 64)
    assert ds.names == sorted(ds.names)
    assert ds.images.min() >= -1.0 and ds.images.max() <= 1.0


def test_non_square_is_stretched(tmp_path):
    arr = np.zeros((40, 100, 3), dtype=np.uint8)
    arr[:, 50:] = 255  # right half white
    Image.fromarray(arr).save(tmp_path / "wide.png")
    img = load_dataset(tmp_path, R64).images[0]
    # the split stays at the horizontal midpoint and spans the full height: no crop, no padding
    assert torch.all(img[:, :, :31] == -1.0)
    assert torch.all(img[:, :, 33:] == 1.0)


def test_already_sized_image_is_unchanged(tmp_path):
    arr = np.random.default_rng(0).integers(0, 256, size=(64, 64, 3), dtype=np.uint8)
    Image.fromarray(arr).save(tmp_path / "a.png")
    img = load_dataset(tmp_path, R64).images[0]
    expected = torch.from_numpy(arr.transpose(2, 0, 1).astype(np.float32) / 127.5 - 1.0)
    assert torch.equal(img, expected)


def test_empty_folder(tmp_path):
    with pytest.raises(ConfigError):
        load_dataset(tmp_path, R64)


def test_missing_folder(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path / "nope", R64)


def test_undecodable_skipped(tmp_path, caplog):
    write(tmp_path / "good.png", (64, 64))
    (tmp_path / "bad.png").write_bytes(b"garbage")
    with caplog.at_level(logging.WARNING):
        ds = load_dataset(tmp_path, R64)
    assert len(ds) == 1 and ds.names == ["good.png"]
    assert "bad.png" in caplog.text


def test_all_undecodable(tmp_path):
    (tmp_path / "bad.png").write_bytes(b"garbage")
    with pytest.raises(ConfigError):
        load_dataset(tmp_path, R64)


@pytest.mark.parametrize("kind", ["shapes", "textures", "checkers"])
def test_synth_deterministic(kind):
    a = synth_dataset(kind, 4, 7)
    b = synth_dataset(kind, 4, 7)
    assert torch.equal(a.images, b.images)
    assert a.images.shape == (4, 3, 64, 64)
    assert a.images.min() >= -1.0 and a.images.max() <= 1.0
    assert not torch.equal(a.images, synth_dataset(kind, 4, 8).images)


def test_synth_prefix_stable():
    assert torch.equal(synth_dataset("shapes", 3, 0).images, synth_dataset("shapes", 5, 0).images[:3])


def color_histogram(images, bins=8):
    flat = ((images + 1) / 2).permute(1, 0, 2, 3).reshape(3, -1).numpy()
    return np.concatenate([np.histogram(c, bins=bins, range=(0, 1))[0] / c.size for c in flat])


def test_domains_differ():
    shapes = synth_dataset("shapes", 32, 0)
    checkers = synth_dataset("checkers", 32, 0)
    textures = synth_dataset("textures", 32, 0)
    h = {k: color_histogram(d.images) for k, d in [("s", shapes), ("c", checkers), ("t", textures)]}
    # total-variation distance between pooled color histograms
    assert 0.5 * np.abs(h["s"] - h["c"]).sum() / 3 > 0.05
    assert 0.5 * np.abs(h["s"] - h["t"]).sum() / 3 > 0.05


def test_synth_errors():
    with pytest.raises(ConfigError):
        synth_dataset("clouds", 2, 0)
    with pytest.raises(ConfigError):
        synth_dataset("shapes", 0, 0)


def test_resolve_dataset(tmp_path):
    config = ModelConfig(resolution=16, latent_dim=8)
    assert resolve_dataset("synth:checkers:3:1", config).images.shape == (3, 3, 16, 16)
    with pytest.raises(ConfigError):
        resolve_dataset("synth:checkers:3", config)
    write(tmp_path / "x.png", (20, 20))
    assert len(resolve_dataset(str(tmp_path), config)) == 1


def test_batch_order_reproducible():
    ds = synth_dataset("shapes", 5, 0, resolution=8)
    a = ds.batches(3, 1)
    b = ds.batches(3, 1)
    first = [next(a) for _ in range(6)]
    assert all(np.array_equal(x, next(b)) for x in first)
    # each epoch is a permutation
    flat = np.concatenate(first)[:15]
    assert sorted(flat[:5].tolist()) == list(range(5))
