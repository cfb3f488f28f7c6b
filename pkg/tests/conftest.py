import numpy as np
import pytest

from rigidlab.corpus import R1, T1, T2

RESULTS: dict[str, tuple[str, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(RESULTS, key=lambda s: int(s.split()[0])):
        status, detail = RESULTS[key]
        terminalreporter.write_line(f"[{status}] criterion {key}: {detail}")


@pytest.fixture
def record():
    """Record one acceptance line; call with (criterion label, passed, detail)."""
    def _record(label: str, passed: bool, detail: str):
        RESULTS[label] = ("PASS" if passed else "FAIL", detail)
        return passed
    return _record


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=[T1, T2, R1], ids=["T1", "T2", "R1"])
def manifold(request):
    return request.param
