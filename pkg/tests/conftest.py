import numpy as np
import pytest

from multispat.geometry import Polygon, build_mesh


@pytest.fixture(scope="session")
def unit_square():
    return Polygon.square(0.0, 0.0, 1.0)


@pytest.fixture(scope="session")
def square_mesh(unit_square):
    return build_mesh(unit_square, max_edge_inner=0.15, max_edge_outer=0.3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(mod.RESULTS, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
        terminalreporter.write_line(line)
