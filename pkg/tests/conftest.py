import pytest
from hypothesis import HealthCheck, settings

from ecgscan.evaluation import SyntheticTraceSpec, render_synthetic_trace

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# cheap scrypt so credential tests stay fast
FAST_SCRYPT = {"n": 2 ** 4, "r": 1, "p": 1}


@pytest.fixture(scope="session")
def clean_trace():
    """10 s, 75 bpm synthetic photograph and its ground truth."""
    return render_synthetic_trace(SyntheticTraceSpec(), seed=0)


ACCEPTANCE = {}


@pytest.fixture
def record_criterion():
    """Store one summary line per acceptance criterion for the terminal report."""
    def record(number, passed, detail):
        ACCEPTANCE[number] = (passed, detail)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}")
