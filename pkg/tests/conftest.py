import sys
from collections import defaultdict
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

_OUTCOMES = defaultdict(list)
_DETAILS = defaultdict(list)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion the test evidences")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            item.user_properties.append(("criterion", mark.args[0]))


def pytest_runtest_logreport(report):
    props = [v for k, v in report.user_properties if k == "criterion"]
    if not props:
        return
    n = props[0]
    if report.when == "call" or (report.when == "setup" and not report.passed):
        _OUTCOMES[n].append(report.outcome)
        _DETAILS[n].extend(str(v) for k, v in report.user_properties if k == "detail")


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_OUTCOMES):
        outcomes = _OUTCOMES[n]
        if any(o == "failed" for o in outcomes):
            status = "FAIL"
        elif all(o == "passed" for o in outcomes):
            status = "PASS"
        else:
            status = "SKIPPED"
        line = f"AC{n} {status}: {len(outcomes)} checks"
        if _DETAILS[n]:
            line += "; " + "; ".join(_DETAILS[n])
        terminalreporter.write_line(line)
