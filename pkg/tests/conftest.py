import os
import sys

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, os.path.dirname(__file__))

from eminamg.problems import gen_elasticity_cube, gen_poisson  # noqa: E402

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def poisson_small():
    return gen_poisson((5, 5))


@pytest.fixture(scope="session")
def elasticity_tiny():
    # 1 x 1 x 2 bricks: 24 free DOFs after the base patch is fixed
    A, X, V = gen_elasticity_cube(1, 1, 2)
    return A, V


@pytest.fixture(scope="session")
def elasticity_small():
    A, X, V = gen_elasticity_cube(3)
    return A, V


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[num])
