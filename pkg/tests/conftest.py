import pytest

from polycavity.generate import canned


@pytest.fixture
def t0():
    return canned("t0")


@pytest.fixture
def t1():
    return canned("t1")


@pytest.fixture
def t2():
    return canned("t2")


@pytest.fixture
def fig1():
    return canned("fig1")


_CRITERIA = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_CRITERIA] = []


@pytest.fixture
def report_criterion(request):
    """Record one pass/fail line per acceptance criterion; lines are echoed in the summary."""
    lines = request.config.stash[_CRITERIA]

    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} ({detail})"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_CRITERIA, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
