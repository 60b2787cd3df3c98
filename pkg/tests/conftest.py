import numpy as np
import pytest

from mmm4rec.model import ModelConfig, init_params

from helpers import toy_catalog


@pytest.fixture
def small_cfg():
    return ModelConfig(latent_dim=8, state_dim=4, kernel_size=3, max_len=6, dropout=0.0)


@pytest.fixture
def small_store(small_cfg):
    return init_params(small_cfg, 0, (6, 5), 20)


@pytest.fixture
def catalog():
    return toy_catalog()


@pytest.fixture
def rng():
    return np.random.default_rng(123)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
