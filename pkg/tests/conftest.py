import pytest

from sdaevar.io import load_bundled


@pytest.fixture(scope="session")
def micro3():
    return load_bundled("micro3")


@pytest.fixture(scope="session")
def wscc9():
    return load_bundled("wscc9")


ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def accept():
    """Record one pass/fail line for an acceptance criterion, then assert it."""

    def record(label, ok, detail):
        line = f"{label}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
