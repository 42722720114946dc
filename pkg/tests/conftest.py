import pytest

_VERDICTS = "_opsk_acceptance"


@pytest.fixture
def verdict(request):
    """Record one acceptance line, print it, then assert on it."""
    lines = request.config.__dict__.setdefault(_VERDICTS, [])

    def report(number, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number:>2}: {detail}"
        lines.append((number, line))
        print(line)
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.__dict__.get(_VERDICTS)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(lines):
        terminalreporter.write_line(line)
