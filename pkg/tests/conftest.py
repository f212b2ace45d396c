import pytest

_LINES = pytest.StashKey[list]()


@pytest.fixture
def acceptance_report(request):
    """Record one ``ACCEPTANCE <n>: PASS|FAIL`` line, echoed in the terminal summary."""
    lines = request.config.stash.setdefault(_LINES, [])

    def report(number, title, passed, detail=""):
        line = f"ACCEPTANCE {number} {title}: {'PASS' if passed else 'FAIL'}" + (f" ({detail})" if detail else "")
        lines.append(line)
        print(line)
        return passed

    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
