from __future__ import annotations

import sys

import numpy as np
import pytest

from scemix.geometry import SiteSet


@pytest.fixture
def grid9():
    return SiteSet.regular_grid(9, 9, 2.2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
