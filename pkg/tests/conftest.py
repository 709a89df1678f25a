import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_CRITERIA: dict[str, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or (rep.when != "call" and rep.passed):
        return
    number, title = marker.args
    entry = _CRITERIA.setdefault(number, {"title": title, "passed": True, "detail": [], "seconds": 0.0})
    entry["passed"] &= rep.passed
    entry["seconds"] += rep.duration
    entry["detail"] += [str(v) for k, v in item.user_properties if k == "detail"]
    if rep.failed and rep.when == "call":
        entry["detail"].append(str(call.excinfo.value).splitlines()[0] if call.excinfo else "failed")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        e = _CRITERIA[number]
        status = "PASS" if e["passed"] else "FAIL"
        detail = "; ".join(dict.fromkeys(e["detail"]))
        terminalreporter.write_line(f"[{status}] criterion {number}: {e['title']} ({e['seconds']:.1f} s) {detail}")
