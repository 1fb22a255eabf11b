import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

_criteria = []


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        _criteria.append(report)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for rep in _criteria:
        props = dict(rep.user_properties)
        status = "PASS" if rep.passed else "FAIL"
        label = props.get("criterion", rep.nodeid)
        terminalreporter.write_line(f"{status}  {label}  [{props.get('measured', '')}]")
