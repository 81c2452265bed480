"""Shared fixtures and the --runslow switch for the acceptance runs."""

import numpy as np
import pytest

from config import ModelKind
from datagen import ScenarioSpec, generate
from domain import build_samples, split_dataset
from models.base import Controller
from models.ovrv import OvrvParams

TRUTH = (0.05, 0.2, 1.0, 10.0)


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow acceptance tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long training or calibration acceptance run")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


class ConstantController(Controller):
    """Commands the same acceleration whatever the state."""

    kind = ModelKind.OVRV

    def __init__(self, accel: float, seq_len: int = 1, name: str = "constant"):
        self.value = float(accel)
        self._seq_len = seq_len
        self.name = name

    @property
    def seq_len(self) -> int:
        return self._seq_len

    def predict(self, windows):
        return np.full(len(windows), self.value)

    def rdc_gradients(self, batch):
        return np.zeros((len(batch), 3))


@pytest.fixture
def constant_controller():
    return ConstantController


@pytest.fixture(scope="session")
def truth_params():
    return OvrvParams.from_sequence(TRUTH)


@pytest.fixture(scope="session")
def oscillatory(truth_params):
    """Two minutes of noiseless oscillatory data driven by known OVRV parameters."""
    traj, _ = generate(ScenarioSpec("oscillatory", duration=120.0, params=truth_params))
    return traj


@pytest.fixture(scope="session")
def small_split(oscillatory):
    samples = build_samples(oscillatory, seq_len=4)
    return split_dataset(samples, (0.8, 0.1, 0.1), seed=0)
