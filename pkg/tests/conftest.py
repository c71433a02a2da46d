"""Shared fixtures and the acceptance-criteria summary.

The desk-scale optimization runs are session-scoped because several
acceptance tests consume the same trajectory; everything else is cheap
enough to rebuild per test.
"""

from __future__ import annotations

import pytest

from topofuse.mesh import make_preset
from topofuse.simp import SimpConfig, default_schedule, run_simp

_CRITERIA: dict[int, dict] = {}


@pytest.fixture(scope="session")
def desk_problem():
    # 24 x 12 x 6 cantilever, 1728 elements
    return make_preset("cantilever", scale=0.2)


@pytest.fixture(scope="session")
def desk_simp_fp64(desk_problem):
    config = SimpConfig(
        schedule=default_schedule(120), precision="fp64", variant="fused", scatter="serial"
    )
    return run_simp(desk_problem, config)


@pytest.fixture(scope="session")
def desk_simp_fp32(desk_problem):
    config = SimpConfig(
        schedule=default_schedule(120), precision="fp32", variant="fused", scatter="serial"
    )
    return run_simp(desk_problem, config)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when != "call":
        return
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    num, desc = marker.args
    entry = _CRITERIA.setdefault(int(num), {"desc": desc, "passed": True})
    if report.outcome != "passed":
        entry["passed"] = False


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_CRITERIA):
        entry = _CRITERIA[num]
        verdict = "PASS" if entry["passed"] else "FAIL"
        terminalreporter.write_line(f"criterion {num:2d} {verdict}  {entry['desc']}")
