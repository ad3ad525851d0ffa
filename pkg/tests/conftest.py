import re

from hypothesis import settings

settings.register_profile("default", deadline=None)
settings.load_profile("default")

CRITERIA = {
    1: "reduction-oracle equality",
    2: "sparsity preservation",
    3: "masked-dense conv equivalence",
    4: "end-to-end path equivalence",
    5: "tree depth reproduction",
    6: "cost-formula reproduction",
    7: "arithmetic spot-checks",
    8: "cycle-calibration sanity",
    9: "pool/flatten oracle",
    10: "format round-trips",
}

_outcomes: dict[int, list[bool]] = {}


def pytest_runtest_logreport(report):
    m = re.search(r"test_acceptance\.py::test_ac(\d+)_", report.nodeid)
    if not m:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _outcomes.setdefault(int(m.group(1)), []).append(report.outcome == "passed")


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n, name in CRITERIA.items():
        runs = _outcomes.get(n)
        if runs is None:
            status = "NOT RUN"
        else:
            status = "PASS" if all(runs) else "FAIL"
        terminalreporter.write_line(f"AC{n:<3}{status:<8}{name}")
