"""Shared test plumbing: the acceptance suite records one verdict line per
criterion here, and the terminal summary replays them so the lines are
visible without -s."""

_acceptance_lines = []


def record_acceptance(line: str):
    _acceptance_lines.append(line)


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in _acceptance_lines:
            terminalreporter.write_line(line)
