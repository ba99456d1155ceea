import pytest


@pytest.fixture
def verdict(request):
    """Record one acceptance criterion outcome for the end-of-run summary."""
    table = request.config.__dict__.setdefault("_ultrkit_acceptance", {})

    def record(number: int, passed: bool, detail: str):
        line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}: {detail}"
        table[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, config):
    table = getattr(config, "_ultrkit_acceptance", None)
    if table:
        terminalreporter.section("acceptance criteria")
        for number in sorted(table):
            terminalreporter.write_line(table[number])
