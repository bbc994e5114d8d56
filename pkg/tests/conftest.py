import pytest

from intermittency import maps


@pytest.fixture(scope="session")
def pm_map():
    return maps.pm(0.5)


@pytest.fixture(scope="session")
def lsv_map():
    return maps.lsv(0.5)


@pytest.fixture(scope="session")
def dbl():
    return maps.doubling(0.5)


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: longer numerical checks")
    config.stash[_VERDICTS] = []


_VERDICTS = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line per acceptance criterion; echoed in the summary."""
    log = request.config.stash[_VERDICTS]

    def record(cid, ok, detail):
        line = f"{cid:>6}  {'PASS' if ok else 'FAIL'}  {detail}"
        log.append(line)
        print(line)
        return ok

    return record


def _order(line):
    cid = line.split()[0].lstrip("C")
    num = "".join(ch for ch in cid if ch.isdigit())
    return int(num), cid[len(num):]


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(lines, key=_order):
            terminalreporter.write_line(line)
