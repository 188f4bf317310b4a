import pytest

ACCEPTANCE_LINES = []


@pytest.fixture
def criterion(capsys):
    """Report one acceptance criterion: prints a PASS/FAIL line and returns the verdict."""

    def report(number, title, passed, detail=""):
        line = f"criterion {number:2d}  {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line, flush=True)
        return passed

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
