"""Acceptance bookkeeping: each criterion records a verdict that is printed after the run."""

CRITERIA = {
    1: "gradient fidelity",
    2: "sub-goal selection oracle",
    3: "HER sanity",
    4: "sequential baseline fails structurally",
    5: "baseline ordering",
    6: "random-skip ceiling",
    7: "demo-count robustness",
    8: "determinism",
    9: "episode-return identity",
}

VERDICTS = {}


def record(criterion, passed, detail):
    VERDICTS[criterion] = (bool(passed), detail)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n, name in CRITERIA.items():
        if n in VERDICTS:
            passed, detail = VERDICTS[n]
            terminalreporter.write_line(f"criterion {n} ({name}): {'PASS' if passed else 'FAIL'}  {detail}")
        else:
            terminalreporter.write_line(f"criterion {n} ({name}): NOT RUN")
