import pytest

_LINES = []


@pytest.fixture
def record():
    """Register a one-line verdict for the terminal summary."""

    def add(name: str, ok: bool, detail: str) -> bool:
        _LINES.append(f"{name} {'PASS' if ok else 'FAIL'}: {detail}")
        print(_LINES[-1])
        return ok

    return add


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_LINES, key=lambda s: int(s.split()[0].split("-")[1])):
            terminalreporter.write_line(line)
