import pytest

_LINES = []


@pytest.fixture(scope="session")
def criterion():
    """Record one PASS/FAIL line per acceptance criterion, then assert it.

    ``ok=None`` records the criterion as not applicable and skips the test.
    """
    def check(name, ok, detail=""):
        tag = "N/A" if ok is None else "PASS" if ok else "FAIL"
        line = f"[{tag}] {name}" + (f" -- {detail}" if detail else "")
        _LINES.append(line)
        print(line)
        if ok is None:
            pytest.skip(line)
        assert ok, line
    return check


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
