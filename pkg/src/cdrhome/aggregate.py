"""Columnar, streaming aggregation of CDR events into user-month traces.

Records are reduced chunk by chunk to unique (user, tower, day) rows, so memory
scales with the number of distinct active user-tower-days rather than with the
number of records. Detection then runs vectorized over the whole table.
"""
from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import date
from typing import Iterator, Sequence

import numpy as np
import pandas as pd

from .cdr_core import (CDR_HEADER, TIMESTAMP_FORMAT, MonthWindow, ParseError, TowerNetwork,
                       TowerStats, UserMonthTrace, check_night, check_windows)
from .errors import DataError, UnknownTowerError
from .hda import AlgorithmSpec, HomeDetection, Variant

_EPOCH_ORDINAL = date(1970, 1, 1).toordinal()
MAX_STORED_ERRORS = 1000


@dataclass
class ReadStats:
    n_lines: int = 0
    n_records: int = 0
    n_errors: int = 0
    dropped_out_of_window: int = 0
    errors: list[ParseError] = field(default_factory=list)

    def add_error(self, err: ParseError) -> None:
        self.n_errors += 1
        if len(self.errors) < MAX_STORED_ERRORS:
            self.errors.append(err)


def night_mask(hour: np.ndarray, night_start: int, night_end: int) -> np.ndarray:
    if night_start > night_end:
        return (hour >= night_start) | (hour < night_end)
    return (hour >= night_start) & (hour < night_end)


class TraceAggregator:
    """Accumulates events as integer arrays and builds a :class:`TraceTable`."""

    def __init__(self, network: TowerNetwork, windows: Sequence[MonthWindow],
                 night_start: int = 19, night_end: int = 9, compact_rows: int = 8_000_000):
        check_night(night_start, night_end)
        self.network = network
        self.windows = tuple(check_windows(windows))
        if not self.windows:
            raise DataError("no month windows")
        self.night_start, self.night_end = night_start, night_end
        self.compact_rows = compact_rows
        self.day0 = self.windows[0].start.toordinal()
        self.n_span = self.windows[-1].end.toordinal() - self.day0 + 1
        starts = np.array([w.start.toordinal() - self.day0 for w in self.windows])
        ends = np.array([w.end.toordinal() - self.day0 for w in self.windows])
        # day offset -> window index, -1 outside every window
        self._day_window = np.full(self.n_span, -1, dtype=np.int64)
        for k, (a, b) in enumerate(zip(starts, ends)):
            self._day_window[a:b + 1] = k
        self._user_codes: dict[str, int] = {}
        self._parts: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []
        self._n_rows = 0
        self.dropped = 0
        self.n_events = 0

    def user_codes(self, user_ids) -> np.ndarray:
        codes, uniques = pd.factorize(np.asarray(user_ids, dtype=object))
        table = self._user_codes
        mapped = np.array([table.setdefault(u, len(table)) for u in uniques], dtype=np.int64)
        return mapped[codes]

    def add(self, user_code: np.ndarray, tower: np.ndarray, day_ordinal: np.ndarray,
            hour: np.ndarray) -> None:
        """Add events given as parallel arrays (user codes from :meth:`user_codes`)."""
        off = np.asarray(day_ordinal, dtype=np.int64) - self.day0
        inside = (off >= 0) & (off < self.n_span)
        inside[inside] = self._day_window[off[inside]] >= 0
        self.dropped += int((~inside).sum())
        if not inside.all():
            user_code, tower, off, hour = user_code[inside], tower[inside], off[inside], hour[inside]
        self.n_events += len(off)
        if not len(off):
            return
        nt = len(self.network)
        key = (np.asarray(user_code, dtype=np.int64) * nt + tower) * self.n_span + off
        night = night_mask(np.asarray(hour), self.night_start, self.night_end)
        self._push(*_reduce(key, np.ones(len(key), dtype=np.int64), night.astype(np.int64)))

    def _push(self, key, count, night) -> None:
        self._parts.append((key, count, night))
        self._n_rows += len(key)
        if self._n_rows > self.compact_rows and len(self._parts) > 1:
            self._compact()

    def _compact(self) -> None:
        key, count, night = (np.concatenate(p) for p in zip(*self._parts))
        self._parts = [_reduce(key, count, night)]
        self._n_rows = len(self._parts[0][0])

    def finish(self) -> "TraceTable":
        if self._parts:
            self._compact()
            key, count, night = self._parts[0]
        else:
            key = count = night = np.zeros(0, dtype=np.int64)
        nt = len(self.network)
        off = key % self.n_span
        ut = key // self.n_span
        tower = ut % nt
        user_int = ut // nt
        names = np.array(list(self._user_codes), dtype=object)
        order = np.argsort(names, kind="stable") if len(names) else np.zeros(0, dtype=np.int64)
        rank = np.empty(len(names), dtype=np.int64)
        rank[order] = np.arange(len(names))
        user = rank[user_int] if len(user_int) else user_int
        month = self._day_window[off]
        srt = np.lexsort((off, tower, month, user))
        days = DayRows(user[srt], month[srt], tower[srt], off[srt] + self.day0, count[srt], night[srt])
        return TraceTable.from_day_rows(tuple(names[order].tolist()), self.windows, self.network,
                                        days, self.night_start, self.night_end)


def _reduce(key, count, night):
    uniq, inv = np.unique(key, return_inverse=True)
    return (uniq,
            np.bincount(inv, weights=count, minlength=len(uniq)).astype(np.int64),
            np.bincount(inv, weights=night, minlength=len(uniq)).astype(np.int64))


@dataclass(frozen=True)
class DayRows:
    """Unique (user, month, tower, day) activity rows sorted in that order."""
    user: np.ndarray
    month: np.ndarray
    tower: np.ndarray
    day: np.ndarray  # date ordinal
    count: np.ndarray
    night: np.ndarray

    def __len__(self):
        return len(self.user)


@dataclass(frozen=True)
class TraceTable:
    """All user-month traces as rows of (user, month, tower) sorted in that order."""
    users: tuple[str, ...]
    months: tuple[MonthWindow, ...]
    network: TowerNetwork
    user: np.ndarray
    month: np.ndarray
    tower: np.ndarray
    total: np.ndarray
    days: np.ndarray
    night: np.ndarray
    night_start: int = 19
    night_end: int = 9
    day_rows: DayRows | None = None

    def __len__(self):
        return len(self.user)

    @classmethod
    def from_day_rows(cls, users, months, network, d: DayRows, night_start, night_end) -> "TraceTable":
        nt = len(network)
        key = (d.user * len(months) + d.month) * nt + d.tower
        if len(key):
            first = np.r_[True, key[1:] != key[:-1]]
        else:
            first = np.zeros(0, dtype=bool)
        starts = np.flatnonzero(first)
        total = np.add.reduceat(d.count, starts) if len(starts) else d.count
        night = np.add.reduceat(d.night, starts) if len(starts) else d.night
        ndays = np.diff(np.r_[starts, len(key)])
        return cls(users, tuple(months), network, d.user[starts], d.month[starts], d.tower[starts],
                   total, ndays, night, night_start, night_end, d)

    @property
    def um(self) -> np.ndarray:
        return self.user * len(self.months) + self.month

    @property
    def n_user_months(self) -> int:
        um = self.um
        return int(np.count_nonzero(np.r_[True, um[1:] != um[:-1]])) if len(um) else 0

    def slices(self, parts: int) -> list[tuple[int, int]]:
        """Split rows into up to ``parts`` contiguous ranges aligned on user-month boundaries."""
        n = len(self)
        if parts <= 1 or n == 0:
            return [(0, n)]
        um = self.um
        cuts = [0]
        for k in range(1, parts):
            c = int(np.searchsorted(um, um[min(n - 1, k * n // parts)], side="left"))
            if c > cuts[-1]:
                cuts.append(c)
        cuts.append(n)
        return [(a, b) for a, b in zip(cuts, cuts[1:]) if b > a]

    def rows(self, lo: int, hi: int) -> "TraceTable":
        return TraceTable(self.users, self.months, self.network, self.user[lo:hi], self.month[lo:hi],
                          self.tower[lo:hi], self.total[lo:hi], self.days[lo:hi], self.night[lo:hi],
                          self.night_start, self.night_end, None)

    def to_traces(self) -> Iterator[UserMonthTrace]:
        """Materialize :class:`UserMonthTrace` objects (needs the day-level rows)."""
        d = self.day_rows
        if d is None:
            raise DataError("trace table was built without day-level rows")
        ids = self.network.ids
        cur = None
        towers: dict[str, TowerStats] = {}
        acc: dict[int, list] = {}

        def flush():
            for t, (tot, nig, ds) in sorted(acc.items()):
                towers[ids[t]] = TowerStats(tot, nig, frozenset(ds))
            return UserMonthTrace(self.users[cur[0]], self.months[cur[1]], dict(towers),
                                  self.night_start, self.night_end)

        for u, m, t, day, c, n in zip(d.user.tolist(), d.month.tolist(), d.tower.tolist(),
                                      d.day.tolist(), d.count.tolist(), d.night.tolist()):
            if (u, m) != cur:
                if cur is not None:
                    yield flush()
                cur, towers, acc = (u, m), {}, {}
            slot = acc.setdefault(t, [0, 0, []])
            slot[0] += c
            slot[1] += n
            slot[2].append(day)
        if cur is not None:
            yield flush()

    def top_shares(self, k: int = 3) -> np.ndarray:
        """(n_user_months, k) matrix of activity shares in each trace's top-k towers."""
        if not len(self):
            return np.zeros((0, k))
        um = self.um
        order = np.lexsort((-self.total, um))
        um_s, tot_s = um[order], self.total[order].astype(float)
        first = np.r_[True, um_s[1:] != um_s[:-1]]
        starts = np.flatnonzero(first)
        gid = np.cumsum(first) - 1
        pos = np.arange(len(um_s)) - starts[gid]
        sums = np.add.reduceat(tot_s, starts)
        out = np.zeros((len(starts), k))
        keep = pos < k
        out[gid[keep], pos[keep]] = tot_s[keep] / sums[gid[keep]]
        return out


def month_records_per_user(table: TraceTable) -> dict[str, int]:
    counts = np.bincount(table.month, weights=table.total, minlength=len(table.months))
    return {w.label: int(c) for w, c in zip(table.months, counts)}


# ---------------------------------------------------------------- detection


@dataclass(frozen=True)
class DetectionTable:
    """Vectorized detections of one algorithm; absent ranks carry tower -1 and score 0."""
    algorithm: str
    user: np.ndarray
    month: np.ndarray
    towers: np.ndarray  # (n, 3)
    scores: np.ndarray  # (n, 3)
    su: np.ndarray

    def __len__(self):
        return len(self.user)

    @classmethod
    def concat(cls, parts: Sequence["DetectionTable"]) -> "DetectionTable":
        return cls(parts[0].algorithm, *(np.concatenate([getattr(p, f) for p in parts])
                                         for f in ("user", "month", "towers", "scores", "su")))

    def to_detections(self, table: TraceTable) -> list[HomeDetection]:
        ids = table.network.ids
        out = []
        for u, m, ts, ps, su in zip(self.user.tolist(), self.month.tolist(), self.towers.tolist(),
                                    self.scores.tolist(), self.su.tolist()):
            ranked = tuple((ids[t], p) for t, p in zip(ts, ps) if t >= 0)
            out.append(HomeDetection(table.users[u], table.months[m].label, self.algorithm, ranked, su))
        return out


def _group_scores(um, tower, base, network: TowerNetwork, radius_m: float) -> np.ndarray:
    """Vectorized spatial grouping; rows must be sorted by (um, tower)."""
    nt = len(network)
    indptr, indices = network.neighbors(radius_m)
    key = um * nt + tower
    deg = indptr[tower + 1] - indptr[tower]
    total_deg = int(deg.sum())
    rep = np.repeat(np.arange(len(um)), deg)
    within = np.arange(total_deg) - np.repeat(np.cumsum(deg) - deg, deg)
    nb = indices[np.repeat(indptr[tower], deg) + within]
    qkey = um[rep] * nt + nb
    pos = np.searchsorted(key, qkey)
    pos[pos >= len(key)] = 0
    found = key[pos] == qkey
    grouped = np.bincount(rep[found], weights=base[pos[found]], minlength=len(um))
    return np.rint(grouped).astype(np.int64)


def detect_table(table: TraceTable, spec: AlgorithmSpec) -> DetectionTable:
    v = spec.variant
    if v.uses_night and (table.night_start, table.night_end) != (spec.night_start_h, spec.night_end_h):
        raise DataError("trace table was built with a different night window than the algorithm spec")
    if v.uses_night:
        base = table.night
    elif v is Variant.MAX_DISTINCT_DAYS:
        base = table.days
    else:
        base = table.total
    keep = base > 0
    um, tower, total, base = table.um[keep], table.tower[keep], table.total[keep], base[keep]
    user, month = table.user[keep], table.month[keep]
    if v.grouped:
        base = _group_scores(um, tower, base, table.network, spec.radius_m)
    # tower index order equals tower_id order, so it breaks the final tie
    order = np.lexsort((tower, -total, -base, um))
    um_s = um[order]
    first = np.r_[True, um_s[1:] != um_s[:-1]] if len(um_s) else np.zeros(0, dtype=bool)
    starts = np.flatnonzero(first)
    gid = np.cumsum(first) - 1
    pos = np.arange(len(um_s)) - starts[gid] if len(um_s) else gid
    top = pos < 3
    n = len(starts)
    towers = np.full((n, 3), -1, dtype=np.int64)
    scores = np.zeros((n, 3), dtype=np.int64)
    towers[gid[top], pos[top]] = tower[order][top]
    scores[gid[top], pos[top]] = base[order][top]
    su = batch_su(towers, scores, table.network)
    return DetectionTable(spec.name, user[order][starts], month[order][starts], towers, scores, su)


def batch_su(towers: np.ndarray, scores: np.ndarray, network: TowerNetwork) -> np.ndarray:
    """SU per row using the same operation order as :func:`cdrhome.uncertainty.su_value`."""
    xy = network.xy
    su = np.zeros(len(towers))
    if not len(towers):
        return su
    l1 = towers[:, 0]
    p1 = scores[:, 0].astype(float)
    for k in (1, 2):
        lk = towers[:, k]
        has = lk >= 0
        lk_safe = np.where(has, lk, l1)
        d = np.hypot(xy[l1, 0] - xy[lk_safe, 0], xy[l1, 1] - xy[lk_safe, 1])
        term = (scores[:, k] / p1) * (d / 2)
        su = np.where(has, su + term, su)
    return su


def detect_all(table: TraceTable, specs: Sequence[AlgorithmSpec], threads: int = 1
               ) -> dict[str, DetectionTable]:
    """Run every spec over the table, optionally in threads over user-month partitions."""
    parts = table.slices(max(1, threads) * 4 if threads > 1 else 1)
    out = {}
    if threads > 1 and len(parts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for spec in specs:
                results = list(pool.map(lambda r: detect_table(table.rows(*r), spec), parts))
                out[spec.name] = DetectionTable.concat(results)
    else:
        for spec in specs:
            out[spec.name] = detect_table(table, spec)
    return out


# ---------------------------------------------------------------- CSV input


def _check_header(path) -> None:
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
    cols = tuple(c.strip() for c in first.rstrip("\r\n").split(","))
    if cols != CDR_HEADER:
        raise DataError(f"bad CDR header {cols!r} in {path}, expected {','.join(CDR_HEADER)}")


def _skipped_lines(caught) -> list[int]:
    lines = []
    for w in caught:
        for part in str(w.message).splitlines():
            part = part.strip()
            if part.startswith("Skipping line"):
                lines.append(int(part.split()[2].rstrip(":")))
    return lines


def read_cdr_table(path, network: TowerNetwork, windows: Sequence[MonthWindow],
                   night_start: int = 19, night_end: int = 9, chunksize: int = 1_000_000,
                   stats: ReadStats | None = None) -> TraceTable:
    """Stream a CDR CSV into a :class:`TraceTable`.

    Malformed lines are counted in ``stats`` and skipped; a well-formed line at
    a tower missing from ``network`` raises :class:`UnknownTowerError`.
    """
    stats = stats if stats is not None else ReadStats()
    _check_header(path)
    agg = TraceAggregator(network, windows, night_start, night_end)
    tower_index = pd.Index(network.ids)
    skipped: list[int] = []
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        reader = pd.read_csv(path, dtype=str, chunksize=chunksize, on_bad_lines="warn",
                             keep_default_na=False, na_filter=False, engine="c")
        for chunk in reader:
            new = _skipped_lines(caught)
            caught.clear()
            for ln in new:
                stats.add_error(ParseError(ln, "", f"expected {len(CDR_HEADER)} fields"))
            skipped.extend(new)
            skipped.sort()
            _ingest(chunk, agg, tower_index, stats, skipped)
        for ln in _skipped_lines(caught):
            stats.add_error(ParseError(ln, "", f"expected {len(CDR_HEADER)} fields"))
    stats.dropped_out_of_window += agg.dropped
    return agg.finish()


def _line_numbers(index: np.ndarray, skipped: list[int]) -> list[int]:
    out = []
    for i in index:
        ln = int(i) + 2
        for s in skipped:
            if s <= ln:
                ln += 1
            else:
                break
        out.append(ln)
    return out


def _ingest(chunk: pd.DataFrame, agg: TraceAggregator, tower_index: pd.Index, stats: ReadStats,
            skipped: list[int]) -> None:
    stats.n_lines += len(chunk)
    ts = pd.to_datetime(chunk["timestamp"], format=TIMESTAMP_FORMAT, errors="coerce")
    direction = chunk["direction"].isin(("in", "out")).to_numpy()
    kind = chunk["kind"].to_numpy()
    dur = chunk["duration_s"]
    dur_ok = dur.str.isdigit().to_numpy()
    is_text = kind == "text"
    kind_ok = (kind == "call") | is_text
    text_ok = ~is_text | (dur.str.strip("0") == "").to_numpy()
    ids_ok = (chunk["user_id"] != "").to_numpy() & (chunk["tower_id"] != "").to_numpy()
    ok = ts.notna().to_numpy() & direction & kind_ok & dur_ok & text_ok & ids_ok
    if not ok.all():
        bad = np.flatnonzero(~ok)
        lines = _line_numbers(chunk.index.to_numpy()[bad], skipped)
        for ln, row in zip(lines, chunk.iloc[bad].itertuples(index=False)):
            stats.add_error(ParseError(ln, ",".join(row), "malformed field"))
        chunk, ts = chunk[ok], ts[ok]
    if not len(chunk):
        return
    tower = tower_index.get_indexer(chunk["tower_id"])
    if (tower < 0).any():
        i = int(np.flatnonzero(tower < 0)[0])
        raise UnknownTowerError(f"unknown tower {chunk['tower_id'].iloc[i]!r} "
                                f"(user {chunk['user_id'].iloc[i]})")
    values = ts.to_numpy()
    day = values.astype("datetime64[D]").astype(np.int64) + _EPOCH_ORDINAL
    hour = ts.dt.hour.to_numpy()
    stats.n_records += len(chunk)
    agg.add(agg.user_codes(chunk["user_id"].to_numpy()), tower.astype(np.int64), day, hour)
