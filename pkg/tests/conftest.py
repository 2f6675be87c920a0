import numpy as np
import pytest

_criteria = {}


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.hookimpl(trylast=True)
def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    number, title = props["criterion"]
    if report.when == "call" or report.failed:
        outcome = "PASS" if report.passed else "FAIL"
        previous = _criteria.get(number)
        if previous is None or previous[1] == "PASS":
            _criteria[number] = (title, outcome, props.get("detail", ""))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, outcome, detail = _criteria[number]
        line = f"criterion {number:2d} {outcome}  {title}"
        if detail:
            line += f"  [{detail}]"
        terminalreporter.write_line(line)
