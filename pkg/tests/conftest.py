import pytest

# criterion id -> list of (check, passed, detail); filled by test_acceptance
ACCEPTANCE = {}


def record(criterion, check, passed, detail=""):
    ACCEPTANCE.setdefault(criterion, []).append((check, bool(passed), detail))
    return bool(passed)


@pytest.fixture
def acceptance():
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for criterion in sorted(ACCEPTANCE, key=lambda c: (len(c), c)):
        checks = ACCEPTANCE[criterion]
        ok = all(p for _, p, _ in checks)
        failed = [f"{name} ({detail})" for name, p, detail in checks if not p]
        line = f"{'PASS' if ok else 'FAIL'}  criterion {criterion}: {len(checks) - len(failed)}/{len(checks)} checks"
        if failed:
            line += "; failing: " + "; ".join(failed)
        tr.write_line(line)
