import os
import sys

import numpy as np
import pytest

project_root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, project_root)

from common.data_model import ObservationSet


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="run the Monte Carlo acceptance checks")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long Monte Carlo checks, run with --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def random_dataset(rng, n, dim=1, continuous_key=True):
    """Random observations with both arms present and a monotone-ish treatment pattern."""
    while True:
        x = rng.standard_normal((n, dim)) if continuous_key else rng.integers(0, 4, (n, dim)).astype(float)
        p = 1.0 / (1.0 + np.exp(-(x.sum(axis=1) + rng.normal(0, 0.5))))
        d = (rng.random(n) < p).astype(int)
        if 0 < d.sum() < n:
            y = rng.normal(0, 2, n) + x.sum(axis=1)
            return ObservationSet.from_arrays(y, d, x)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def hand_example():
    """n = 3 in sorted order: D = (1, 0, 1), Y = (2, 5, 4)."""
    return ObservationSet.from_arrays([2.0, 5.0, 4.0], [1, 0, 1], [0.0, 1.0, 2.0])
