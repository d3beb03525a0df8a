"""Acceptance criteria 1-13 at their stated tolerances.

The battery runs once per session.  Each criterion is reported on its own
line (``criterion <id>: PASS|FAIL measured=... bound=...``) and then asserted,
so a criterion that is not met shows up as a failing test.  Running this file
directly prints the same lines without pytest.
"""

import pytest

from kahlerlab.acceptance import run_battery, verdict

IDS = ["1", "2", "3", "4", "5", "6", "7", "8a", "8b", "9", "10",
       "11a", "11b", "12a", "12b", "12c", "12d", "13"]


def line(r):
    return f"criterion {r.id}: {r.status.upper()} measured={r.measured:.6g} bound={r.bound:.6g}"


@pytest.fixture(scope="module")
def results(request):
    got = {r.id: r for r in run_battery("full")}
    reporter = request.config.pluginmanager.getplugin("terminalreporter")
    if reporter is not None:
        reporter.write_line("")
        for r in got.values():
            reporter.write_line(line(r))
    return got


def test_battery_is_complete(results):
    assert list(results) == IDS
    payload = verdict(list(results.values()))
    assert [c["id"] for c in payload["criteria"]] == IDS


@pytest.mark.parametrize("cid", IDS)
def test_criterion(results, cid):
    r = results[cid]
    assert r.passed, line(r) + (f" {r.detail}" if r.detail else "")


if __name__ == "__main__":
    for r in run_battery("full"):
        print(line(r))
