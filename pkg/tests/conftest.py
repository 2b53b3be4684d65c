import pytest

_LINES = {}


@pytest.fixture
def record():
    """Store one pass/fail line per acceptance criterion."""
    def _record(number, passed, detail):
        _LINES[number] = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        print(_LINES[number])
        return passed
    return _record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_LINES):
            terminalreporter.write_line(_LINES[k])
