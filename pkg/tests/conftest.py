import pytest
from hypothesis import settings

# fixed example stream so every run sees the same cases
settings.register_profile("repro", derandomize=True, deadline=None)
settings.load_profile("repro")

_LINES = []


@pytest.fixture
def report():
    """Record one acceptance line: report(number, passed, detail)."""
    def rec(n, passed, detail):
        _LINES.append((n, "PASS" if passed else "FAIL", detail))
        return passed
    return rec


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n, verdict, detail in sorted(_LINES, key=lambda t: t[0]):
        terminalreporter.write_line("criterion %2d: %s  %s" % (n, verdict, detail))
