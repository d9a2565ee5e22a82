import json
import os
import sys

sys.path = [os.path.dirname(os.path.dirname(os.path.abspath(__file__)))] + sys.path

import numpy as np
import pytest

from esnet import utils


def pytest_addoption(parser):
    parser.addoption('--runslow', action='store_true', default=False, help='run the long training experiments')


def pytest_configure(config):
    config.addinivalue_line('markers', 'slow: long-running training experiment, needs --runslow')


def pytest_collection_modifyitems(config, items):
    if config.getoption('--runslow'):
        return
    skip_slow = pytest.mark.skip(reason='needs --runslow')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(utils.DEFAULT_SEED)


@pytest.fixture(autouse=True)
def quiet():
    previous = utils.set_verbosity(0)
    yield
    utils.set_verbosity(previous)


def load_cases(name):
    with open(os.path.join(os.path.dirname(__file__), name), 'r') as fid:
        return json.load(fid)
