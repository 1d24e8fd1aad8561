import numpy as np
import pytest

_acceptance = []


def pytest_runtest_makereport(item, call):
    if not item.nodeid.split("::")[0].endswith("test_acceptance.py"):
        return
    if call.when == "call" or (call.when == "setup" and call.excinfo is not None):
        detail = dict(item.user_properties).get("detail", "")
        if call.excinfo is None:
            status = "PASS"
        elif call.excinfo.errisinstance(pytest.skip.Exception):
            status = "SKIPPED"
            detail = detail or str(call.excinfo.value)
        else:
            status = "FAIL"
            detail = detail or call.excinfo.exconly().splitlines()[0]
        _acceptance.append((item.name, status, detail))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name, status, detail in _acceptance:
        terminalreporter.write_line(f"{status:8s} {name}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
