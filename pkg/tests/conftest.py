import pytest

_REPORT: list[str] = []


@pytest.fixture
def criterion():
    """Record one acceptance line; the test still asserts on its own."""

    def record(number: int, name: str, ok: bool, detail: str = "") -> bool:
        _REPORT.append(f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {name}" + (f" -- {detail}" if detail else ""))
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _REPORT:
        terminalreporter.section("acceptance criteria")
        for line in _REPORT:
            terminalreporter.write_line(line)
