import pytest

# filled by test_acceptance.py: (criterion number, title, passed, detail)
ACCEPTANCE_LINES: list[tuple[int, str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for num, title, ok, detail in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {num}: {title} | {detail}")


@pytest.fixture
def report():
    def _report(num: int, title: str, ok: bool, detail: str) -> None:
        ACCEPTANCE_LINES.append((num, title, bool(ok), detail))
        print(f"[{'PASS' if ok else 'FAIL'}] criterion {num}: {title} | {detail}")
        assert ok, f"criterion {num} failed: {detail}"
    return _report
