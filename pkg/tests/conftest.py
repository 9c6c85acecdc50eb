import pytest

GATE = pytest.StashKey[list]()


@pytest.fixture
def gate(request, capsys):
    """Record one PASS/FAIL line for an acceptance criterion and print it."""
    lines = request.config.stash.setdefault(GATE, [])

    def report(number: int, title: str, ok: bool, detail: str) -> None:
        line = f"criterion {number} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        lines.append(line)
        with capsys.disabled():
            print("\n" + line)

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(GATE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
