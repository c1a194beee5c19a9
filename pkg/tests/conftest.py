import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from proxidist.data import Dataset  # noqa: E402
from proxidist.simulators.dgp import Component1Config, generate  # noqa: E402

ACCEPTANCE_LINES = []


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def component1_data():
    data, oracle = generate(Component1Config(rho=0.75, n=800), np.random.default_rng(3))
    return data, oracle


@pytest.fixture
def toy_data(rng):
    n = 200
    x = rng.standard_normal((n, 2))
    z = rng.standard_normal((n, 1)) + x[:, :1]
    w = rng.standard_normal((n, 1)) - x[:, 1:]
    a = (rng.random(n) < 0.5).astype(int)
    y = x[:, 0] + w[:, 0] + a + rng.standard_normal(n)
    return Dataset(y=y, a=a, z=z, w=w, x=x)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
