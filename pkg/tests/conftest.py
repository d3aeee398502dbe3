"""Shared pytest plumbing: the acceptance summary block.

test_acceptance.py records one line per criterion into ACCEPTANCE_LINES;
printing them from a terminal-summary hook keeps them visible even though
pytest captures stdout during the tests themselves.
"""

ACCEPTANCE_LINES: dict[float, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
