"""Collects acceptance outcomes and prints one PASS/FAIL line per criterion."""

import pytest

_RESULTS = {}


@pytest.fixture
def report_criterion(request):
    """Call with ``(ok, detail)``; the test should then assert ``ok``."""
    num = request.node.get_closest_marker("criterion").args[0]

    def record(ok, detail):
        _RESULTS[num] = (bool(ok), detail)
        print(f"criterion {num}: {'PASS' if ok else 'FAIL'} | {detail}")

    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when != "call":
        return
    num = marker.args[0]
    if rep.failed and (num not in _RESULTS or _RESULTS[num][0]):
        _RESULTS[num] = (False, _RESULTS.get(num, (None, "test raised before reporting"))[1])


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_RESULTS):
        ok, detail = _RESULTS[num]
        terminalreporter.write_line(f"criterion {num}: {'PASS' if ok else 'FAIL'} | {detail}")
