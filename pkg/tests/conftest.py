import pytest

_LINES: list[str] = []


@pytest.fixture
def criterion(request):
    """Record one pass/fail line for an acceptance criterion.

    Call it before asserting so failing criteria are reported too.
    """
    def record(label: str, passed: bool, detail: str = "") -> bool:
        line = f"{label:<5} {'PASS' if passed else 'FAIL'}  {detail}".rstrip()
        _LINES.append(line)
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
