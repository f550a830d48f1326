import pytest

_CRITERIA: dict[int, str] = {}


@pytest.fixture(scope="session")
def criterion():
    """Record one pass/fail line per acceptance criterion; printed in the terminal summary."""

    def record(number: int, passed: bool, detail: str):
        prev = _CRITERIA.get(number)
        ok = passed and (prev is None or prev.startswith("PASS"))
        body = detail if prev is None else prev.split(": ", 1)[1] + "; " + detail
        _CRITERIA[number] = f"{'PASS' if ok else 'FAIL'} criterion {number}: {body}"
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[n])
