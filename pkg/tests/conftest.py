import pytest

ACCEPTANCE = []


def record(criterion, ok, detail=""):
    ACCEPTANCE.append((criterion, bool(ok), detail))
    print(f"criterion {criterion}: {'PASS' if ok else 'FAIL'} {detail}")


@pytest.fixture
def accept():
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for crit, ok, detail in ACCEPTANCE:
        terminalreporter.write_line(f"criterion {crit}: {'PASS' if ok else 'FAIL'} {detail}")
