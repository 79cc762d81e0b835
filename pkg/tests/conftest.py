import pytest

_VERDICTS = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_VERDICTS] = []


@pytest.fixture
def verdict(request):
    """Record one acceptance line; the line is printed in the terminal summary whether or not the test fails."""
    lines = request.config.stash[_VERDICTS]

    def record(number, title, ok, detail):
        lines.append((number, f"criterion {number} {'PASS' if ok else 'FAIL'}  {title}: {detail}"))
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
