import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

# number -> {"title", "outcomes": [...], "details": [...]}
_criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    number, title = marker.args
    entry = _criteria.setdefault(number, {"title": title, "outcomes": [], "details": []})
    if report.when == "call" or report.failed or report.skipped:
        if report.skipped:
            reason = report.longrepr[2] if isinstance(report.longrepr, tuple) else str(report.longrepr)
            entry["outcomes"].append("SKIP")
            entry["details"].append(reason.removeprefix("Skipped: "))
        else:
            entry["outcomes"].append("PASS" if report.passed else "FAIL")
            entry["details"].extend(v for k, v in item.user_properties if k == "measured")


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        entry = _criteria[number]
        outcomes = entry["outcomes"]
        if "FAIL" in outcomes:
            verdict = "FAIL"
        elif outcomes and all(o == "SKIP" for o in outcomes):
            verdict = "SKIP"
        else:
            verdict = "PASS"
        detail = "; ".join(entry["details"])
        terminalreporter.write_line(f"AC{number} {verdict}  {entry['title']}" + (f"  [{detail}]" if detail else ""))
