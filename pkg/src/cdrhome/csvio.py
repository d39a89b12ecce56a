"""Header-checked CSV readers and writers for detections and reports (UTF-8, LF)."""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, Sequence

from .aggregate import DetectionTable, TraceTable
from .errors import DataError
from .hda import HomeDetection

DETECTION_HEADER = ("user_id", "month", "algorithm", "l1", "p1", "l2", "p2", "l3", "p3", "su_m")


def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_rows(path, header: Sequence[str], rows: Iterable[Sequence]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")
            n += 1
    return n


def read_rows(path, header: Sequence[str]) -> list[dict[str, str]]:
    """Read a CSV whose header must start with ``header``; returns dict rows."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        got = next(reader, None)
        if got is None or tuple(got[:len(header)]) != tuple(header):
            raise DataError(f"{path}: expected header {','.join(header)}, got {got}")
        return [dict(zip(got, row)) for row in reader if row]


def detection_row(d: HomeDetection) -> list:
    row = [d.user_id, d.month, d.algorithm]
    for k in range(3):
        if k < len(d.ranked):
            row += [d.ranked[k][0], d.ranked[k][1]]
        else:
            row += ["", ""]
    row.append(None if d.su_m is None else float(d.su_m))
    return row


def write_detections(path, detections: Iterable[HomeDetection]) -> int:
    return write_rows(path, DETECTION_HEADER, (detection_row(d) for d in detections))


def write_detection_table(path, dt: DetectionTable, table: TraceTable) -> int:
    """Fast writer for a vectorized detection table; same bytes as :func:`write_detections`."""
    ids = table.network.ids
    users = table.users
    labels = [m.label for m in table.months]
    algo = dt.algorithm
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(DETECTION_HEADER) + "\n")
        lines = []
        for u, m, ts, ps, su in zip(dt.user.tolist(), dt.month.tolist(), dt.towers.tolist(),
                                    dt.scores.tolist(), dt.su.tolist()):
            parts = [users[u], labels[m], algo]
            for t, p in zip(ts, ps):
                if t >= 0:
                    parts += [ids[t], str(p)]
                else:
                    parts += ["", ""]
            parts.append(repr(su))
            lines.append(",".join(parts))
            if len(lines) >= 100_000:
                fh.write("\n".join(lines) + "\n")
                lines = []
        if lines:
            fh.write("\n".join(lines) + "\n")
    return len(dt)


def parse_detection(row: dict[str, str], where: str = "") -> HomeDetection:
    try:
        ranked = []
        for k in (1, 2, 3):
            t, p = row[f"l{k}"], row[f"p{k}"]
            if t:
                ranked.append((t, int(p)))
        su = row["su_m"]
        return HomeDetection(row["user_id"], row["month"], row["algorithm"], tuple(ranked),
                             float(su) if su else None)
    except (KeyError, ValueError) as exc:
        raise DataError(f"{where}: bad detection row {row}: {exc}") from None


def read_detections(path) -> list[HomeDetection]:
    return [parse_detection(r, str(path)) for r in read_rows(path, DETECTION_HEADER)]


def read_ground_truth(path) -> dict[str, str]:
    rows = read_rows(path, ("user_id", "home_tower_id"))
    return {r["user_id"]: r["home_tower_id"] for r in rows}


def read_vector(path) -> dict[str, float]:
    """Tower-level values from a ``tower_id,value`` CSV."""
    out = {}
    for r in read_rows(path, ("tower_id", "value")):
        try:
            out[r["tower_id"]] = float(r["value"])
        except ValueError:
            raise DataError(f"{path}: bad value {r['value']!r} for {r['tower_id']}") from None
    return out


def algorithm_of(path: Path, detections: Sequence[HomeDetection]) -> str:
    if detections:
        return detections[0].algorithm
    stem = Path(path).stem
    return stem[len("detections_"):] if stem.startswith("detections_") else stem
