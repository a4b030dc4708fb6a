"""Per-criterion pass/fail summary for the acceptance suite."""

import pytest

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    # a failing fixture counts against the criterion as well
    if rep.when == "call" or rep.outcome != "passed":
        _RESULTS.setdefault(marker.args[0], {})[item.name] = (rep.outcome, list(item.user_properties))


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    tr = terminalreporter
    tr.write_sep("=", "acceptance criteria")
    for n in sorted(_RESULTS):
        parts = _RESULTS[n]
        outcomes = {o for o, _ in parts.values()}
        status = "PASS" if outcomes == {"passed"} else "SKIP" if outcomes == {"skipped"} else "FAIL"
        detail = "; ".join(
            f"{name}: {o}" + (" (" + ", ".join(f"{k}={v}" for k, v in props) + ")" if props else "")
            for name, (o, props) in parts.items()
        )
        tr.write_line(f"criterion {n}: {status}  {detail}")
