"""Collects one verdict line per acceptance criterion and prints them at the end
of the run, whether or not output capture is on."""

import pytest

_VERDICTS: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when not in ("setup", "call"):
        return
    if rep.when == "setup" and rep.passed:
        return
    n, title = marker.args
    detail = dict(item.user_properties).get("detail", "")
    status = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
    prev = _VERDICTS.get(n)
    if prev is not None and prev[0] == "FAIL":
        return
    _VERDICTS[n] = (status, title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_VERDICTS):
        status, title, detail = _VERDICTS[n]
        line = f"{status} criterion {n}: {title}"
        terminalreporter.write_line(f"{line} [{detail}]" if detail else line)
