import contextlib

import numpy as np
import pytest

from motionkit.pose_model import TOPOLOGY, FullPose, PoseSequence

_ACCEPTANCE = []


class AcceptanceLog:
    """Collects one PASS/FAIL line per criterion for the terminal summary."""

    def record(self, criterion, passed, detail=""):
        _ACCEPTANCE.append((criterion, bool(passed), detail))
        print(f"{'PASS' if passed else 'FAIL'}  {criterion}  {detail}")
        return passed

    @contextlib.contextmanager
    def criterion(self, name):
        notes = {}
        try:
            yield notes
        except BaseException as e:
            self.record(name, False, notes.get("detail") or f"{type(e).__name__}: {e}".splitlines()[0])
            raise
        self.record(name, True, notes.get("detail", ""))


@pytest.fixture
def acceptance():
    return AcceptanceLog()


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def template_seq():
    return PoseSequence(512, 768, 30.0, (FullPose(np.array(TOPOLOGY.template)),))
