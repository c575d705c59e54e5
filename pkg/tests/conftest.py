import pytest

_RESULTS = {}


@pytest.fixture(scope="session")
def acceptance():
    """Record ``(criterion, passed, detail)`` for the end-of-run summary."""

    def record(key, passed, detail):
        _RESULTS[key] = (bool(passed), detail)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_RESULTS, key=lambda k: int(k[2:].split()[0].rstrip(":"))):
        ok, detail = _RESULTS[key]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {key}: {detail}")
