import os
import sys

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, os.path.dirname(__file__))

from ietidp.geometry import build_box_grid, build_quarter_annulus  # noqa: E402
from ietidp.ieti import setup  # noqa: E402
from ietidp.problems import annulus_manufactured  # noqa: E402

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


def box_rhs(x, y):
    return np.sin(np.pi * x) * (1.0 + y) + 2.0


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def toy21():
    """2x1 boxes, p=2, 4 spans per direction: one interface, no interior vertex."""
    mp = build_box_grid(2, 1, 2, 2, width=2.0)
    return setup(mp, box_rhs)


@pytest.fixture(scope="session")
def toy22():
    """2x2 boxes, p=2, 4 spans: one interior vertex shared by four patches."""
    mp = build_box_grid(2, 2, 2, 2)
    return setup(mp, box_rhs)


@pytest.fixture(scope="session")
def toy33():
    """3x3 boxes, p=2, 4 spans: the middle patch is floating."""
    mp = build_box_grid(3, 3, 2, 2)
    return setup(mp, box_rhs)


@pytest.fixture(scope="session")
def annulus_small():
    _, f = annulus_manufactured()
    mp = build_quarter_annulus(8, 4, 2, 2)
    return setup(mp, f)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
