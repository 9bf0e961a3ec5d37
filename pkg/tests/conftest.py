import pytest

_KEY = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """record(number, passed, detail) -> stores one line for the end-of-run summary."""
    results = request.config.stash.setdefault(_KEY, {})

    def record(number: int, passed: bool, detail: str) -> bool:
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}"
        results[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_KEY, {})
    if not results:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(results):
        terminalreporter.write_line(results[number])
