"""Shared pytest plumbing: collects the acceptance suite's one-line verdicts
and prints them after the run (terminal summary is never captured)."""

acceptance_lines: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if acceptance_lines:
        terminalreporter.section("acceptance summary")
        for line in acceptance_lines:
            terminalreporter.write_line(line)
