import pytest
import torch

from stylenoise.core import ShapeError
from stylenoise.losses import FeatureExtractor, IdentityStage, mse_loss, perceptual_loss, proxy_extractor, total_loss


@pytest.fixture(scope="module")
def extractor():
    return proxy_extractor()


def pair(seed, size=16, dtype=torch.float32):
    g = torch.Generator().manual_seed(seed)
    x = torch.rand(2, 3, size, size, generator=g, dtype=dtype) * 2 - 1
    y = torch.rand(2, 3, size, size, generator=g, dtype=dtype) * 2 - 1
    return x, y


def test_mse_identity_and_offset():
    x, _ = pair(0)
    assert mse_loss(x, x).item() == 0.0
    x = torch.zeros(1, 3, 8, 8)
    assert mse_loss(x, x + 0.5).item() == 0.25


def test_mse_symmetric():
    for seed in range(5):
        x, y = pair(seed)
        assert mse_loss(x, y).item() == mse_loss(y, x).item()


def test_shape_mismatch(extractor):
    with pytest.raises(ShapeError):
        mse_loss(torch.zeros(1, 3, 8, 8), torch.zeros(1, 3, 16, 16))
    with pytest.raises(ShapeError):
        perceptual_loss(torch.zeros(1, 3, 8, 8), torch.zeros(1, 3, 16, 16), extractor)


def test_perceptual_identity(extractor):
    x, _ = pair(1)
    assert perceptual_loss(x, x, extractor).item() == 0.0
    assert total_loss(x, x, extractor).item() == 0.0


def test_perceptual_non_negative(extractor):
    for seed in range(100):
        x, y = pair(seed, size=8)
        assert perceptual_loss(x, y, extractor).item() >= 0.0


def test_perceptual_gradient_finite_differences():
    ext = proxy_extractor(dtype=torch.float64)
    x, y = pair(3, size=8, dtype=torch.float64)
    x = x[:1].clone().requires_grad_(True)
    y = y[:1]
    perceptual_loss(x, y, ext).backward()
    analytic = x.grad
    h = 1e-6
    worst = 0.0
    for idx in [(0, 0, 0, 0), (0, 1, 3, 4), (0, 2, 7, 7), (0, 0, 5, 2), (0, 1, 1, 6)]:
        xp, xm = x.detach().clone(), x.detach().clone()
        xp[idx] += h
        xm[idx] -= h
        numeric = (perceptual_loss(xp, y, ext) - perceptual_loss(xm, y, ext)).item() / (2 * h)
        worst = max(worst, abs(analytic[idx].item() - numeric) / max(abs(numeric), 1e-12))
    assert worst < 1e-3


def test_zero_stage_extractor_is_mse():
    empty = FeatureExtractor([], [])
    x, y = pair(4)
    assert perceptual_loss(x, y, empty).item() == 0.0
    assert torch.equal(total_loss(x, y, empty), mse_loss(x, y))


def test_total_is_sum(extractor):
    x, y = pair(5)
    assert torch.equal(total_loss(x, y, extractor), mse_loss(x, y) + perceptual_loss(x, y, extractor))


def test_identity_stage_zero_iff_equal():
    ext = FeatureExtractor([IdentityStage()], [torch.ones(3)])
    x, _ = pair(6)
    assert total_loss(x, x, ext).item() == 0.0
    y = x.clone()
    y[0, 0, 0, 0] += 0.01
    assert total_loss(x, y, ext).item() > 0.0


def test_negative_weights_rejected():
    with pytest.raises(ValueError):
        FeatureExtractor([IdentityStage()], [-torch.ones(3)])


def test_extractor_not_trainable(extractor):
    assert list(extractor.parameters()) == [] or all(not p.requires_grad for p in extractor.parameters())


def test_proxy_deterministic():
    x, _ = pair(7)
    a = proxy_extractor().embed(x)
    b = proxy_extractor().embed(x)
    assert torch.equal(a, b)
    assert a.shape == (2, 16 + 32 + 64)
