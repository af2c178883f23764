import pytest

VERDICTS: list[str] = []


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for an acceptance criterion; the body sets ``state['ok']`` and ``state['detail']``."""
    state = {"ok": False, "detail": "did not finish"}
    yield state
    line = f"{'PASS' if state['ok'] else 'FAIL'} {request.node.name}: {state['detail']}"
    print(line)
    VERDICTS.append(line)


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
