import os
import sys

sys.path.insert(0, os.path.dirname(__file__))

# one line per acceptance criterion, echoed into the terminal summary so the
# verdicts survive output capture
acceptance_lines: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_lines:
            terminalreporter.write_line(line)
