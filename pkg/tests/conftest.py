import pytest

# outcome of every acceptance criterion, in run order: (number, title, passed)
_CRITERIA = {}


def _criterion(item):
    mark = item.get_closest_marker("criterion")
    return None if mark is None else mark.args[0]


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    n = _criterion(item)
    if n is None:
        return
    doc = (item.obj.__doc__ or item.name).strip().splitlines()[0]
    ok = _CRITERIA.get(n, (doc, True))[1]
    if rep.failed or (rep.when == "call" and rep.skipped):
        ok = False
    _CRITERIA[n] = (doc, ok)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        doc, ok = _CRITERIA[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {n:2d}: {doc}")
