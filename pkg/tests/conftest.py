import re

import pytest

CRITERION = re.compile(r"test_acceptance\.py::test_criterion_(\d+)_")


@pytest.fixture
def criterion_detail(request):
    """Attach a one-line measurement summary to an acceptance test."""

    def record(text: str):
        request.node.user_properties.append(("detail", text))

    return record


def pytest_terminal_summary(terminalreporter):
    results = {}
    for outcome in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(outcome, []):
            m = CRITERION.search(getattr(report, "nodeid", ""))
            if not m or report.when not in ("call", "setup"):
                continue
            detail = dict(report.user_properties).get("detail", "")
            ok = outcome == "passed" and report.when == "call"
            key = int(m.group(1))
            if key not in results or not ok:
                results[key] = (ok, report.nodeid.split("::")[-1], detail)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(results):
        ok, name, detail = results[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {name}  {detail}")
