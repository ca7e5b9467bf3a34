import os

import numpy as np
import pytest


@pytest.fixture(scope="session", autouse=True)
def _cache_dir(tmp_path_factory):
    """Keep simulated critical values out of the user's cache."""
    path = tmp_path_factory.mktemp("critvals")
    old = os.environ.get("SEQCP_CACHE_DIR")
    os.environ["SEQCP_CACHE_DIR"] = str(path)
    yield path
    if old is None:
        os.environ.pop("SEQCP_CACHE_DIR", None)
    else:
        os.environ["SEQCP_CACHE_DIR"] = old


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def pytest_collection_modifyitems(config, items):
    if os.environ.get("SEQCP_FULL") == "1":
        return
    skip = pytest.mark.skip(reason="full-scale reproduction; set SEQCP_FULL=1")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)
