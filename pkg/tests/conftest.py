"""Shared pytest wiring: one visible verdict line per acceptance criterion."""

import pytest


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when != "call" or not item.name.startswith("test_criterion_"):
        return
    reporter = item.config.pluginmanager.get_plugin("terminalreporter")
    if reporter is None:
        return
    if report.passed:
        verdict = "PASS"
    elif report.skipped:
        verdict = "SKIP"
    else:
        verdict = "FAIL"
    label = item.name.removeprefix("test_").replace("_", " ")
    reporter.write_line(f"[acceptance] {label}: {verdict}")
