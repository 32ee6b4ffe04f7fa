import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "src", "pisn"))


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="运行长时间收敛测试")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: 长时间收敛测试，需要 --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="需要 --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
