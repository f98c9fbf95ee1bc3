import re
from collections import defaultdict

_CRITERION = re.compile(r"test_acceptance\.py::test_criterion_(\d+)")
_outcomes = defaultdict(list)


def pytest_runtest_logreport(report):
    m = _CRITERION.search(report.nodeid)
    if m and (report.when == "call" or report.outcome != "passed"):
        _outcomes[int(m.group(1))].append((report.nodeid.split("::")[-1], report.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for k in sorted(_outcomes):
        parts = _outcomes[k]
        ok = all(o == "passed" for _, o in parts)
        detail = ", ".join(f"{name.split('_', 3)[-1]}={o}" for name, o in parts)
        tr.write_line(f"{'PASS' if ok else 'FAIL'} criterion {k}: {detail}")
