import pytest

_ACCEPTANCE: dict[int, str] = {}


class Verdicts:
    """Collects one PASS/FAIL line per acceptance criterion."""

    def record(self, number: int, title: str, ok: bool, detail: str = "") -> None:
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}"
        if detail:
            line += f"  ({detail})"
        _ACCEPTANCE[number] = line
        print(line)
        assert ok, line


@pytest.fixture(scope="session")
def verdicts() -> Verdicts:
    return Verdicts()


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        terminalreporter.write_line(_ACCEPTANCE[number])


def pytest_runtest_logreport(report):
    # a criterion that raised before recording its verdict still gets a FAIL line
    name = report.nodeid.rsplit("::", 1)[-1]
    if report.failed and name.startswith("test_criterion_"):
        number = int(name.split("_")[2])
        _ACCEPTANCE.setdefault(number, f"criterion {number:>2} FAIL  {name} raised before reporting")
