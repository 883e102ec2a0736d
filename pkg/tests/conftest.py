import numpy as np
import pytest
from hypothesis import settings

from folhe.kernel import FoliatedTorusModel

settings.register_profile("folhe", deadline=None, max_examples=25, derandomize=True)
settings.load_profile("folhe")


@pytest.fixture(scope="session")
def t2s1():
    """``T^2 x S^1`` with the product foliation, unit volume."""
    return FoliatedTorusModel.product(1, N=6)


@pytest.fixture(scope="session")
def t2s1_n8():
    return FoliatedTorusModel.product(1, N=8)


@pytest.fixture(scope="session")
def t4s1():
    return FoliatedTorusModel.product(2, N=3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d} {'PASS' if ok else 'FAIL'}  {detail}")
