"""Shared pytest plumbing: a visible per-criterion verdict table.

The acceptance tests register one line per criterion; printing them from
the terminal-summary hook makes the verdicts visible under plain
``pytest -v`` where per-test stdout is captured.
"""

_CRITERION_RESULTS = []


def record_criterion(number, description, ok, detail=""):
    line = f"criterion {number:02d} {'PASS' if ok else 'FAIL'}: {description}"
    if detail:
        line += f" [{detail}]"
    _CRITERION_RESULTS.append((number, line))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERION_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_CRITERION_RESULTS):
        terminalreporter.write_line(line)
