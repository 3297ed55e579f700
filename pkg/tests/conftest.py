import pytest

ACCEPTANCE_LINES: list[str] = []


def record(criterion: int, passed: bool | None, detail: str) -> None:
    """Log one acceptance verdict; ``None`` means recorded without a verdict."""
    verdict = {True: "PASS", False: "FAIL", None: "RECORDED"}[passed]
    ACCEPTANCE_LINES.append(f"criterion {criterion:>2}: {verdict}  {detail}")


@pytest.fixture
def accept():
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
