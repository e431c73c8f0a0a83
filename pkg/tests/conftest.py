"""Shared pytest plumbing: collects the acceptance-check result lines and
prints them as a block at the end of the run, so the one-line-per-criterion
report is visible even when per-test output capture is on."""

ACCEPTANCE_LINES: list[str] = []


def record(line: str) -> None:
    ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)
