import pytest

_LINES = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """report(number, title, checks, details) records one PASS/FAIL line per criterion."""
    lines = request.config.stash.setdefault(_LINES, [])

    def report(number: int, title: str, checks: dict, details: str = "") -> bool:
        failed = [name for name, ok in checks.items() if not ok]
        status = "FAIL" if failed else "PASS"
        line = f"criterion {number} {status}: {title}"
        if failed:
            line += f" (failed: {'; '.join(failed)})"
        if details:
            line += f" [{details}]"
        lines.append((number, line))
        print(line)
        return not failed

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
