"""Shared test plumbing.

The acceptance tests append one line per criterion to `acceptance_lines`;
the terminal-summary hook prints them at the end of the run so the
verdicts are visible in plain `pytest` output without -s.
"""

acceptance_lines: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_lines:
            terminalreporter.write_line(line)
