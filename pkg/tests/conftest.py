from contextlib import contextmanager

import numpy as np
import pytest

from rotaprop.grid import make_grid


@pytest.fixture(scope="session")
def grid64():
    return make_grid(64, 64, 12.0, 12.0)


@pytest.fixture(scope="session")
def grid128():
    return make_grid(128, 128, 16.0, 16.0)


@pytest.fixture(scope="session")
def small_grid():
    return make_grid(40, 32, 10.0, 10.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# criterion number -> (title, passed, detail); filled by the acceptance suite
ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


@pytest.fixture
def criterion():
    @contextmanager
    def record(number: int, title: str):
        info = {"detail": ""}
        try:
            yield info
        except BaseException:
            ACCEPTANCE[number] = (title, False, info["detail"] or "raised")
            raise
        ACCEPTANCE[number] = (title, True, info["detail"])

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {number:2d}  {title}: {detail}")
