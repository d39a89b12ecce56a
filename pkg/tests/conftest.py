import sys
import math
from datetime import date, datetime

import pytest

from cdrhome.cdr_core import CdrRecord, Direction, Kind, MonthWindow, TowerNetwork


def rec(user, when, tower, direction="out", kind="call", duration=None):
    if isinstance(when, str):
        when = datetime.fromisoformat(when)
    if duration is None:
        duration = 0 if kind == "text" else 30
    return CdrRecord(user, when, tower, Direction(direction), Kind(kind), duration)


JUNE = MonthWindow("2007-06", date(2007, 6, 1), date(2007, 6, 30))


@pytest.fixture
def triangle():
    """Towers A, B, C pairwise 1000 m apart."""
    return TowerNetwork(["A", "B", "C"], [(0.0, 0.0), (1000.0, 0.0), (500.0, 500.0 * math.sqrt(3))])


@pytest.fixture
def abc_records():
    """10 events at A, 5 at B, 1 at C, all in June during the day."""
    out = []
    for k in range(10):
        out.append(rec("x", datetime(2007, 6, 1 + k, 12), "A"))
    for k in range(5):
        out.append(rec("x", datetime(2007, 6, 1 + k, 13), "B"))
    out.append(rec("x", datetime(2007, 6, 20, 14), "C"))
    return out


def write_cdr(path, records):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("user_id,timestamp,tower_id,direction,kind,duration_s\n")
        for r in records:
            fh.write(f"{r.user_id},{r.timestamp:%Y-%m-%dT%H:%M:%S},{r.tower_id},"
                     f"{r.direction.value},{r.kind.value},{r.duration_s}\n")
    return path


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
