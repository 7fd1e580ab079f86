import numpy as np
import pytest
from hypothesis import settings

from dampwave.coeffcalc import make_profile

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


def P(family, **params):
    return make_profile(family, params)


@pytest.fixture
def exp_up():
    return P("exp", c=1, alpha=1)


@pytest.fixture
def zero():
    return P("constant", c=0)


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-300)))


# one line per acceptance criterion, printed after the run
ACCEPTANCE = {}


def record(ac: int, ok: bool, detail: str):
    ACCEPTANCE[ac] = f"AC{ac:<2d} {'PASS' if ok else 'FAIL'}  {detail}"
    print(ACCEPTANCE[ac])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for ac in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[ac])
