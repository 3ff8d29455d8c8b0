import copy
import json
from pathlib import Path

import pytest

from afsim.core import Packet

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


def scenario_doc(name: str) -> dict:
    return json.loads((SCENARIOS / name).read_text())


@pytest.fixture
def minimal_doc():
    return copy.deepcopy(scenario_doc("minimal.json"))


def pkt(size=1500, seq=0, flow_id=0, **kw):
    return Packet(flow_id, seq, size, **kw)


_CRITERIA: dict[str, tuple[bool, str]] = {}


def record_criterion(name: str, ok: bool, detail: str) -> None:
    _CRITERIA[name] = (ok, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_CRITERIA, key=lambda n: int(n[1:])):
        ok, detail = _CRITERIA[name]
        terminalreporter.write_line(f"{name} {'PASS' if ok else 'FAIL'}  {detail}")
