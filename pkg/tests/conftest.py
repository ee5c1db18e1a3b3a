import pytest

# (number, passed, detail) lines collected by the acceptance tests
ACCEPTANCE: list[tuple[int, bool, str]] = []


def record(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE.append((number, bool(passed), detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}")


@pytest.fixture
def acceptance_record():
    return record
