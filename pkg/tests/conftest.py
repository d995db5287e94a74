import numpy as np
import pytest
from hypothesis import settings

from anisoadapt.mesh import build_mesh, unit_square_crisscross

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


@pytest.fixture
def right_triangle():
    return build_mesh([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]])


@pytest.fixture
def square2():
    """Unit square cut along the (0,0)-(1,1) diagonal."""
    return build_mesh([[0, 0], [1, 0], [1, 1], [0, 1]], [[0, 1, 2], [0, 2, 3]])


@pytest.fixture(scope="session")
def grid8():
    return unit_square_crisscross(8)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


_ACCEPTANCE: dict = {}


@pytest.fixture(scope="session")
def acceptance():
    """Record ``(criterion, ok, detail)``; lines are printed in the terminal summary."""

    def record(criterion: int, ok: bool, detail: str) -> bool:
        line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE[criterion] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[k])
