import numpy as np
import pytest
import torch

from realgait.model import ModelConfig

ACCEPTANCE_RESULTS: list[str] = []


def tiny_config(**kw) -> ModelConfig:
    base = dict(input_size=64, use_alignment=False, block23_stride=1, channel_scale=0.25, patch_dim=32)
    base.update(kw)
    return ModelConfig(**base)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _seed_torch():
    torch.manual_seed(0)
    yield
    torch.use_deterministic_algorithms(False)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_RESULTS:
            terminalreporter.write_line(line)
