"""Shared pytest plumbing.

``ACCEPTANCE_LINES`` is filled by tests/test_acceptance.py; the hook below
prints the collected report after the run so the per-criterion verdicts are
visible even with output capture on.
"""

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance report")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
