import os
import sys

import pytest
import torch

# Add the project root to the Python path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))
sys.path.insert(0, os.path.abspath(os.path.dirname(__file__)))

from factories import tiny_config  # noqa: E402


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: desk-scale runs, enabled with SIMPL_RUN_SLOW=1")


def pytest_collection_modifyitems(config, items):
    if os.environ.get("SIMPL_RUN_SLOW") == "1":
        return
    skip_slow = pytest.mark.skip(reason="set SIMPL_RUN_SLOW=1 to run desk-scale tests")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(autouse=True)
def _deterministic_torch():
    torch.manual_seed(0)
    yield


@pytest.fixture
def config():
    return tiny_config()
