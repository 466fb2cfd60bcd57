"""Shared pytest plumbing.

The acceptance tests report one human-readable verdict line each; collecting
them here and re-printing them in the terminal summary gives a scoreboard at
the end of a full run even though pytest captures per-test stdout.
"""

_VERDICTS = []


def record_verdict(line):
    _VERDICTS.append(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
