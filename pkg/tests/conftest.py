import numpy as np
import pytest

from roadcotrain.numgrad import _backend


@pytest.fixture
def gen():
    return np.random.default_rng(20240611)


@pytest.fixture(params=sorted(_backend.AVAILABLE))
def backend(request):
    """Run the test once per available conv backend."""
    before = _backend.name()
    _backend.use(request.param)
    yield request.param
    _backend.use(before)


# -- acceptance summary -------------------------------------------------------
# Tests marked ``criterion("name")`` get one PASS/FAIL line at the end of the
# run, followed by any numbers they attached with ``record_property("detail", ...)``.

_CRITERIA: dict[str, list] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion reported in the summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        status = "PASS" if rep.passed else "SKIP" if rep.skipped else "FAIL"
        details = [v for k, v in item.user_properties if k == "detail"]
        _CRITERIA.setdefault(mark.args[0], []).append((item.name, status, details))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for name, runs in _CRITERIA.items():
        statuses = {s for _, s, _ in runs}
        status = "FAIL" if "FAIL" in statuses else "PASS" if "PASS" in statuses else "SKIP"
        tr.write_line(f"{status}  {name}  ({len(runs)} checks)")
        for test, s, details in runs:
            if s != "PASS" or details:
                tr.write_line(f"        {s.lower():<4} {test}")
            for d in details:
                for line in str(d).splitlines():
                    tr.write_line(f"              {line}")
