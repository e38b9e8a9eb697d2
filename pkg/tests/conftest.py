import numpy as np
import pytest

from rumench4.core import Series, Unit


def make_series(values, dt=1.0, t0=0.0, valid=None, unit=Unit.PPM, flags=None):
    values = np.asarray(values, dtype=float)
    valid = np.isfinite(values) if valid is None else np.asarray(valid, bool)
    return Series(t0, dt, values, valid, unit, flags=flags)


@pytest.fixture
def series():
    return make_series


def pytest_terminal_summary(terminalreporter):
    import acceptance_log
    if acceptance_log.RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(acceptance_log.RESULTS):
            terminalreporter.write_line(acceptance_log.line(n, *acceptance_log.RESULTS[n]))
