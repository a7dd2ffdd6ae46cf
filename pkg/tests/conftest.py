import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")
warnings.filterwarnings("ignore", category=UserWarning, module="numba")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_psd(rng, d, rank=None):
    A = rng.standard_normal((d, rank or d))
    return A @ A.T


_CRITERIA = []


@pytest.fixture
def criterion():
    """Record one acceptance line; call as ``criterion(number, ok, detail)``."""

    def record(number, ok, detail):
        _CRITERIA.append((number, bool(ok), detail))
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number, ok, detail in sorted(_CRITERIA, key=lambda c: c[0]):
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
