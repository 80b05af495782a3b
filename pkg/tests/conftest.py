import re
from collections import OrderedDict

CRITERIA = OrderedDict(
    [
        (1, "gradient fidelity of all five objectives"),
        (2, "reward-SFT factorisation and tether values"),
        (3, "loss saturation ordering on the fixture"),
        (4, "pull-up and reward ordering on the fixture"),
        (5, "holdout drift tethering proxy"),
        (6, "change ratio vs brute-force LCS and gamma filter"),
        (7, "Connect4 solver oracle and benchmark generation"),
        (8, "hermetic end-to-end pipeline reproducibility"),
    ]
)

_outcomes: dict[int, list[tuple[str, bool]]] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    m = re.search(r"test_criterion_(\d+)_", report.nodeid)
    if m:
        _outcomes.setdefault(int(m.group(1)), []).append((report.nodeid.split("::")[-1], report.passed))


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for num, label in CRITERIA.items():
        results = _outcomes.get(num)
        if not results:
            tr.write_line(f"criterion {num}: NOT RUN  {label}")
            continue
        ok = all(passed for _, passed in results)
        failed = [name for name, passed in results if not passed]
        suffix = f"  (failed: {', '.join(failed)})" if failed else ""
        tr.write_line(f"criterion {num}: {'PASS' if ok else 'FAIL'}  {label}{suffix}")
