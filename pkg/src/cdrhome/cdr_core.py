"""Data model for call detail records, tower networks and per-user monthly traces.

This module holds the reference (record-at-a-time) path. The columnar fast
path used by the CLI lives in :mod:`cdrhome.aggregate` and must produce the
same traces.
"""
from __future__ import annotations

import calendar
import csv
import math
from dataclasses import dataclass
from datetime import date, datetime, timedelta
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataError, EmptyTraceError, UnknownTowerError

EARTH_RADIUS_M = 6_371_000.0
CDR_HEADER = ("user_id", "timestamp", "tower_id", "direction", "kind", "duration_s")
TIMESTAMP_FORMAT = "%Y-%m-%dT%H:%M:%S"


class Direction(str, Enum):
    INCOMING = "in"
    OUTGOING = "out"


class Kind(str, Enum):
    CALL = "call"
    TEXT = "text"


@dataclass(frozen=True, slots=True)
class CdrRecord:
    user_id: str
    timestamp: datetime
    tower_id: str
    direction: Direction
    kind: Kind
    duration_s: int = 0

    def __post_init__(self):
        if self.duration_s < 0:
            raise ValueError("duration_s must be non-negative")
        if self.kind is Kind.TEXT and self.duration_s != 0:
            raise ValueError("text records carry duration 0")


@dataclass(frozen=True, slots=True)
class ParseError:
    line_no: int
    line: str
    reason: str


def parse_record(line: str) -> CdrRecord:
    parts = line.rstrip("\r\n").split(",")
    if len(parts) != len(CDR_HEADER):
        raise ValueError(f"expected {len(CDR_HEADER)} fields, saw {len(parts)}")
    user_id, ts, tower_id, direction, kind, duration = parts
    if not user_id or not tower_id:
        raise ValueError("empty user_id or tower_id")
    if not duration.isdigit():
        raise ValueError(f"bad duration {duration!r}")
    timestamp = datetime.strptime(ts, TIMESTAMP_FORMAT)
    return CdrRecord(
        user_id=user_id,
        timestamp=timestamp,
        tower_id=tower_id,
        direction=Direction(direction),
        kind=Kind(kind),
        duration_s=int(duration),
    )


def parse_cdr(lines: Iterable[str], errors: list[ParseError] | None = None,
              header: bool = True) -> Iterator[CdrRecord]:
    """Yield records from CDR CSV lines in input order.

    Malformed lines are skipped; when ``errors`` is given, one ``ParseError``
    per bad line is appended to it (line numbers are 1-based, header included).
    """
    it = iter(lines)
    line_no = 0
    if header:
        first = next(it, None)
        line_no = 1
        if first is None:
            return
        cols = tuple(c.strip() for c in first.rstrip("\r\n").split(","))
        if cols != CDR_HEADER:
            raise DataError(f"bad CDR header {cols!r}, expected {','.join(CDR_HEADER)}")
    for line in it:
        line_no += 1
        if not line.strip():
            continue
        try:
            yield parse_record(line)
        except ValueError as exc:
            if errors is not None:
                errors.append(ParseError(line_no, line.rstrip("\r\n"), str(exc)))


class TowerNetwork:
    """Towers with planar coordinates in meters, stored in tower_id order."""

    def __init__(self, tower_ids: Sequence[str], xy):
        ids = [str(t) for t in tower_ids]
        xy = np.asarray(xy, dtype=float).reshape(len(ids), 2)
        if len(set(ids)) != len(ids):
            raise DataError("duplicate tower ids")
        if not np.isfinite(xy).all():
            raise DataError("non-finite tower coordinates")
        order = sorted(range(len(ids)), key=ids.__getitem__)
        self.ids: tuple[str, ...] = tuple(ids[i] for i in order)
        self.xy = xy[order].copy()
        self.xy.setflags(write=False)
        self.index: dict[str, int] = {t: i for i, t in enumerate(self.ids)}
        self._neighbor_cache: dict[float, tuple[np.ndarray, np.ndarray]] = {}

    def __len__(self):
        return len(self.ids)

    def __contains__(self, tower_id):
        return tower_id in self.index

    def __repr__(self):
        return f"TowerNetwork(n={len(self)})"

    def idx(self, tower_id: str) -> int:
        try:
            return self.index[tower_id]
        except KeyError:
            raise UnknownTowerError(f"unknown tower {tower_id!r}") from None

    def position(self, tower_id: str) -> tuple[float, float]:
        x, y = self.xy[self.idx(tower_id)]
        return float(x), float(y)

    def distance(self, a: str, b: str) -> float:
        i, j = self.idx(a), self.idx(b)
        return float(np.hypot(self.xy[i, 0] - self.xy[j, 0], self.xy[i, 1] - self.xy[j, 1]))

    def within(self, tower_id: str, radius_m: float) -> list[str]:
        """Tower ids at distance <= radius_m of ``tower_id`` (itself included)."""
        indptr, indices = self.neighbors(radius_m)
        i = self.idx(tower_id)
        return [self.ids[j] for j in indices[indptr[i]:indptr[i + 1]]]

    def neighbors(self, radius_m: float) -> tuple[np.ndarray, np.ndarray]:
        """CSR adjacency (indptr, indices) of towers within ``radius_m``, self included.

        Candidates come from a KD-tree with a small slack, then are filtered with
        the same ``np.hypot`` used by :meth:`distance` so both paths agree at the
        boundary.
        """
        radius_m = float(radius_m)
        if radius_m in self._neighbor_cache:
            return self._neighbor_cache[radius_m]
        from scipy.spatial import cKDTree

        tree = cKDTree(self.xy)
        pairs = tree.query_pairs(radius_m * (1 + 1e-9) + 1e-9, output_type="ndarray")
        if len(pairs):
            d = np.hypot(self.xy[pairs[:, 0], 0] - self.xy[pairs[:, 1], 0],
                         self.xy[pairs[:, 0], 1] - self.xy[pairs[:, 1], 1])
            pairs = pairs[d <= radius_m]
        n = len(self)
        diag = np.arange(n)
        rows = np.concatenate([diag, pairs[:, 0], pairs[:, 1]])
        cols = np.concatenate([diag, pairs[:, 1], pairs[:, 0]])
        order = np.lexsort((cols, rows))
        rows, cols = rows[order], cols[order]
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=n), out=indptr[1:])
        result = (indptr, cols.astype(np.int64))
        self._neighbor_cache[radius_m] = result
        return result

    def subset(self, tower_ids: Iterable[str]) -> "TowerNetwork":
        ids = sorted(set(tower_ids))
        return TowerNetwork(ids, self.xy[[self.idx(t) for t in ids]])

    def scaled(self, factor: float) -> "TowerNetwork":
        return TowerNetwork(self.ids, self.xy * factor)

    @classmethod
    def from_lonlat(cls, tower_ids: Sequence[str], lon, lat) -> "TowerNetwork":
        """Project lon/lat degrees with an equirectangular projection about the centroid."""
        lon = np.asarray(lon, dtype=float)
        lat = np.asarray(lat, dtype=float)
        lon0, lat0 = lon.mean(), lat.mean()
        x = EARTH_RADIUS_M * np.radians(lon - lon0) * math.cos(math.radians(lat0))
        y = EARTH_RADIUS_M * np.radians(lat - lat0)
        return cls(tower_ids, np.column_stack([x, y]))

    @classmethod
    def from_csv(cls, path) -> "TowerNetwork":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = tuple(h.strip() for h in next(reader, ()))
            rows = [r for r in reader if r]
        planar = {"x_m", "y_m"} <= set(header)
        geo = {"lon", "lat"} <= set(header)
        if planar and geo:
            raise DataError("towers CSV mixes x_m/y_m and lon/lat columns")
        if "tower_id" not in header or not (planar or geo):
            raise DataError(f"towers CSV header must be tower_id,x_m,y_m or tower_id,lon,lat; got {header}")
        col = {h: i for i, h in enumerate(header)}
        try:
            ids = [r[col["tower_id"]].strip() for r in rows]
            if planar:
                xy = [(float(r[col["x_m"]]), float(r[col["y_m"]])) for r in rows]
                return cls(ids, xy)
            lon = [float(r[col["lon"]]) for r in rows]
            lat = [float(r[col["lat"]]) for r in rows]
        except (IndexError, ValueError) as exc:
            raise DataError(f"malformed towers CSV {path}: {exc}") from None
        return cls.from_lonlat(ids, lon, lat)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write("tower_id,x_m,y_m\n")
            for t, (x, y) in zip(self.ids, self.xy):
                fh.write(f"{t},{x:.3f},{y:.3f}\n")


def distance(network: TowerNetwork, tower_a: str, tower_b: str) -> float:
    return network.distance(tower_a, tower_b)


@dataclass(frozen=True, slots=True)
class MonthWindow:
    label: str
    start: date
    end: date

    def __post_init__(self):
        if self.start > self.end:
            raise ConfigError(f"month window {self.label}: start after end")

    @property
    def n_days(self) -> int:
        return (self.end - self.start).days + 1

    def __contains__(self, day: date) -> bool:
        return self.start <= day <= self.end

    def days(self) -> list[date]:
        return [self.start + timedelta(days=k) for k in range(self.n_days)]


def month_windows(start: date, end: date) -> list[MonthWindow]:
    """Split the inclusive range [start, end] on calendar-month boundaries."""
    if start > end:
        raise ConfigError("--from is after --to")
    windows = []
    cur = start
    while cur <= end:
        last = date(cur.year, cur.month, calendar.monthrange(cur.year, cur.month)[1])
        stop = min(last, end)
        windows.append(MonthWindow(f"{cur.year:04d}-{cur.month:02d}", cur, stop))
        cur = stop + timedelta(days=1)
    return windows


def check_windows(windows: Sequence[MonthWindow]) -> list[MonthWindow]:
    ordered = sorted(windows, key=lambda w: w.start)
    for a, b in zip(ordered, ordered[1:]):
        if b.start <= a.end:
            raise ConfigError(f"overlapping month windows {a.label} and {b.label}")
    labels = [w.label for w in ordered]
    if len(set(labels)) != len(labels):
        raise ConfigError("duplicate month window labels")
    return ordered


def find_window(windows: Sequence[MonthWindow], day: date) -> MonthWindow | None:
    for w in windows:
        if day in w:
            return w
    return None


def split_months(records: Iterable[CdrRecord], windows: Sequence[MonthWindow]
                 ) -> tuple[dict[tuple[str, str], list[CdrRecord]], int]:
    """Group records by (user_id, month label); returns the groups and the drop count."""
    windows = check_windows(windows)
    groups: dict[tuple[str, str], list[CdrRecord]] = {}
    dropped = 0
    for rec in records:
        w = find_window(windows, rec.timestamp.date())
        if w is None:
            dropped += 1
            continue
        groups.setdefault((rec.user_id, w.label), []).append(rec)
    return groups, dropped


def in_night(hour: int, night_start: int, night_end: int) -> bool:
    """Half-open night window [night_start, night_end), wrapping past midnight."""
    if night_start > night_end:
        return hour >= night_start or hour < night_end
    return night_start <= hour < night_end


def check_night(night_start: int, night_end: int) -> None:
    for h in (night_start, night_end):
        if not (0 <= h < 24):
            raise ConfigError(f"night hour {h} outside [0, 24)")
    if night_start == night_end:
        raise ConfigError("night window start and end coincide")


@dataclass(frozen=True, slots=True)
class TowerStats:
    total: int
    night: int
    days: frozenset[int]  # date ordinals with at least one activity

    @property
    def distinct_days(self) -> int:
        return len(self.days)

    def merge(self, other: "TowerStats") -> "TowerStats":
        return TowerStats(self.total + other.total, self.night + other.night, self.days | other.days)


@dataclass(frozen=True)
class UserMonthTrace:
    user_id: str
    month: MonthWindow
    towers: Mapping[str, TowerStats]
    night_start: int = 19
    night_end: int = 9

    @property
    def n_records(self) -> int:
        return sum(s.total for s in self.towers.values())

    def totals(self) -> dict[str, int]:
        return {t: s.total for t, s in self.towers.items()}

    def distinct_days(self) -> dict[str, int]:
        return {t: s.distinct_days for t, s in self.towers.items()}

    def night_counts(self) -> dict[str, int]:
        return {t: s.night for t, s in self.towers.items()}

    def check(self) -> None:
        for t, s in self.towers.items():
            if not (1 <= s.distinct_days <= self.month.n_days):
                raise DataError(f"{self.user_id}/{t}: distinct_days out of range")
            if not (0 <= s.night <= s.total) or s.total < 1:
                raise DataError(f"{self.user_id}/{t}: inconsistent counts")


def build_trace(records: Iterable[CdrRecord], month: MonthWindow,
                night_start: int = 19, night_end: int = 9) -> UserMonthTrace:
    check_night(night_start, night_end)
    acc: dict[str, list] = {}
    user = None
    for rec in records:
        if user is None:
            user = rec.user_id
        elif rec.user_id != user:
            raise DataError("build_trace needs records of a single user")
        day = rec.timestamp.date()
        if day not in month:
            raise DataError(f"record on {day} outside month {month.label}")
        slot = acc.setdefault(rec.tower_id, [0, 0, set()])
        slot[0] += 1
        slot[1] += in_night(rec.timestamp.hour, night_start, night_end)
        slot[2].add(day.toordinal())
    if user is None:
        raise EmptyTraceError(f"no records for month {month.label}")
    towers = {t: TowerStats(v[0], v[1], frozenset(v[2])) for t, v in sorted(acc.items())}
    return UserMonthTrace(user, month, towers, night_start, night_end)


def merge_traces(a: UserMonthTrace, b: UserMonthTrace) -> UserMonthTrace:
    if (a.user_id, a.month, a.night_start, a.night_end) != (b.user_id, b.month, b.night_start, b.night_end):
        raise DataError("can only merge traces of the same user, month and night window")
    towers = dict(a.towers)
    for t, s in b.towers.items():
        towers[t] = towers[t].merge(s) if t in towers else s
    return UserMonthTrace(a.user_id, a.month, dict(sorted(towers.items())), a.night_start, a.night_end)


def validate_towers(records: Iterable[CdrRecord], network: TowerNetwork) -> Iterator[CdrRecord]:
    """Pass records through, raising UnknownTowerError on the first tower missing from the network."""
    for rec in records:
        if rec.tower_id not in network:
            raise UnknownTowerError(f"record of user {rec.user_id} at unknown tower {rec.tower_id!r}")
        yield rec


def read_cdr_file(path, errors: list[ParseError] | None = None) -> Iterator[CdrRecord]:
    with open(Path(path), encoding="utf-8") as fh:
        yield from parse_cdr(fh, errors)
