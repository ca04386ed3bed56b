import pytest
import torch

from stylenoise.core import ModelConfig
from stylenoise.decoder import build_decoder
from stylenoise.model import Autoencoder, build_encoder

torch.set_num_threads(1)

# filled by test_acceptance.record, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)


def tiny_config(**overrides):
    values = dict(resolution=16, latent_dim=8, base_channels=4, max_channels=8, mapping_layers=2)
    values.update(overrides)
    return ModelConfig(**values)


@pytest.fixture
def tiny():
    return tiny_config()


@pytest.fixture
def tiny_model(tiny):
    return Autoencoder(build_encoder(tiny, seed=1), build_decoder(tiny, seed=0))


@pytest.fixture
def images16():
    g = torch.Generator().manual_seed(0)
    return torch.rand(4, 3, 16, 16, generator=g) * 2 - 1
