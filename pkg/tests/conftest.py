"""Shared fixtures. Every NDS trajectory built anywhere in the suite is
registered here and checked for jump causality after each test."""

import numpy as np
import pytest

import vacqueue
import vacqueue.limit_sim as limit_sim
from vacqueue.experiments import check_nds_jumps

NDS_LOG: list[dict] = []
_current: list = []
_original = limit_sim.simulate_nds


def _recording_simulate_nds(p, init, cfg, replication=0):
    traj = _original(p, init, cfg, replication)
    _current.append(traj)
    return traj


limit_sim.simulate_nds = _recording_simulate_nds
vacqueue.simulate_nds = _recording_simulate_nds


def nds_violations(traj) -> int:
    bad = traj.diagnostics["causality_violations"]
    if traj.stride == 1:
        bad += check_nds_jumps(traj)
    return bad


@pytest.fixture(autouse=True)
def nds_causality(request):
    _current.clear()
    yield
    for traj in _current:
        NDS_LOG.append({"test": request.node.nodeid, "violations": nds_violations(traj),
                        "up_jumps": traj.diagnostics["up_jumps"], "full_grid": traj.stride == 1})
    bad = [t for t in _current if nds_violations(t)]
    _current.clear()
    assert not bad, f"{len(bad)} NDS trajectories with upward V jumps away from boundary contact"


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance criteria record one line each; printed at the end of the run
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record(k: int, passed: bool, detail: str) -> bool:
    ACCEPTANCE[k] = (bool(passed), detail)
    return bool(passed)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE and not NDS_LOG:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        tr.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
    if NDS_LOG:
        bad = sum(e["violations"] for e in NDS_LOG)
        ups = sum(e["up_jumps"] for e in NDS_LOG)
        full = sum(e["full_grid"] for e in NDS_LOG)
        tr.write_line(f"suite-wide NDS causality: {len(NDS_LOG)} trajectories ({full} checked on the full grid), "
                      f"{ups} upward jumps, {bad} violations -> {'PASS' if bad == 0 else 'FAIL'}")
