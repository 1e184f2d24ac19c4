import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None)
settings.load_profile("default")

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(cid): acceptance criterion checked by this test")


@pytest.fixture
def record(request):
    """record(detail) attaches a one-line measurement to the test's criterion."""
    marker = request.node.get_closest_marker("criterion")
    cid = marker.args[0] if marker else request.node.name

    def _record(detail):
        _RESULTS.setdefault(cid, {"ok": True, "detail": ""})["detail"] = detail

    return _record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when == "teardown" and rep.passed:
        return
    entry = _RESULTS.setdefault(marker.args[0], {"ok": True, "detail": ""})
    if rep.failed:
        entry["ok"] = False
        if not entry["detail"]:
            entry["detail"] = str(rep.longrepr).strip().splitlines()[-1][:160]


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(_RESULTS, key=lambda c: int(c[1:]) if c[1:].isdigit() else 99):
        entry = _RESULTS[cid]
        terminalreporter.write_line(f"{cid} {'PASS' if entry['ok'] else 'FAIL'}  {entry['detail']}")
