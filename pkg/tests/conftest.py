import pytest

ACCEPTANCE: dict[str, str] = {}


@pytest.fixture
def verdict():
    """Record one summary line per acceptance criterion; the test still asserts on its own."""
    def record(key: str, ok: bool, detail: str) -> None:
        ACCEPTANCE[key] = f"{key} {'PASS' if ok else 'FAIL'}  {detail}"
        print(ACCEPTANCE[key])
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance")
        for key in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[key])
