import numpy as np
import pytest

_CRITERIA = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, text): acceptance criterion")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call":
        return
    detail = "; ".join(v for k, v in item.user_properties if k == "detail")
    _CRITERIA.append((mark.args[0], mark.args[1], rep.passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number, text, passed, detail in sorted(_CRITERIA):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {text}"
        if detail:
            line += f"  [{detail}]"
        terminalreporter.write_line(line)
