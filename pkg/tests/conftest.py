import pytest
import torch

from rcnas.corpus import generate_synthetic
from rcnas.encoder import EncoderConfig
from rcnas.training import TaskData

torch.set_num_threads(1)


@pytest.fixture
def tiny_cfg():
    return EncoderConfig(hidden_dim=16, layers=1, heads=2, ffn_dim=32, max_len=64, dropout=0.0)


@pytest.fixture(scope="session")
def small_split():
    return generate_synthetic(5, 160, 48, 48, seed=3)


@pytest.fixture
def small_task(small_split):
    return TaskData(small_split, max_len=64, name="small")


def pytest_configure(config):
    config.acceptance_lines = []


def pytest_terminal_summary(terminalreporter, config):
    if config.acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(config.acceptance_lines):
            terminalreporter.write_line(line)
