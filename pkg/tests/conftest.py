"""Collects acceptance outcomes and prints one line per criterion at the end of the run."""

from collections import defaultdict

_criteria = {}
_outcomes = defaultdict(list)
_measured = defaultdict(list)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by the test")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            number, title = mark.args
            _criteria[item.nodeid] = (number, title)


def pytest_runtest_logreport(report):
    if report.nodeid not in _criteria:
        return
    number, _ = _criteria[report.nodeid]
    if report.when == "call" or report.outcome != "passed":
        _outcomes[number].append(report.outcome)
    if report.when == "call":
        _measured[number].extend(v for k, v in report.user_properties if k == "measured")


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    titles = {n: t for n, t in _criteria.values()}
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(titles):
        results = _outcomes.get(number, [])
        if not results:
            status = "NOT RUN"
        elif any(r == "failed" for r in results):
            status = "FAIL"
        elif all(r == "passed" for r in results):
            status = "PASS"
        else:
            status = "SKIP"
        line = f"criterion {number:2d}: {status:4s}  {titles[number]}"
        if _measured[number]:
            line += "  [" + "; ".join(_measured[number]) + "]"
        terminalreporter.write_line(line)
