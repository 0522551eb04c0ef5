import pytest

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report_criterion():
    """Record one summary line per acceptance criterion and print it."""
    def record(number: int, checks: dict) -> bool:
        ok = all(passed for passed, _ in checks.values())
        failed = [f"{k}: {detail}" for k, (passed, detail) in checks.items() if not passed]
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}"
        if failed:
            line += " (" + "; ".join(failed) + ")"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
