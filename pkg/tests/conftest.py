import os

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", max_examples=500, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion reported in the summary")
    config.criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (report.when != "call" and not report.failed):
        return
    number, title = mark.args
    props = dict(item.user_properties)
    verdict = props.get("verdict", "PASS" if report.passed else "FAIL")
    if report.failed:
        verdict = "FAIL"
    item.config.criteria[number] = (title, verdict, props.get("detail", ""))


def pytest_terminal_summary(terminalreporter, config):
    if not config.criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(config.criteria):
        title, verdict, detail = config.criteria[number]
        terminalreporter.write_line(f"criterion {number:>2} {title}: {verdict}" + (f" ({detail})" if detail else ""))
