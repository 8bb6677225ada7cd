import pytest

REPORT: list = []


@pytest.fixture
def report(capsys):
    """Record one PASS/FAIL line per acceptance criterion and fail the test on FAIL."""

    def _report(name: str, ok: bool, detail: str):
        line = f"{'PASS' if ok else 'FAIL'} {name}: {detail}"
        REPORT.append(line)
        with capsys.disabled():
            print("\n" + line)
        assert ok, line

    return _report


def pytest_terminal_summary(terminalreporter):
    if REPORT:
        terminalreporter.section("acceptance criteria")
        for line in REPORT:
            terminalreporter.write_line(line)
