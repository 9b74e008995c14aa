"""Collects the acceptance verdicts and prints them as one block at the end of the run."""

VERDICTS = {}


def record_verdict(criterion, ok, detail):
    VERDICTS[criterion] = (ok, detail)


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(VERDICTS):
        ok, detail = VERDICTS[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
