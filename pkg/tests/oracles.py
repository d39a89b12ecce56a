"""Independent reference computations used by the tests.

Nothing here imports the code paths it checks: detections are recomputed
from raw records, Gi* with an explicit double loop.
"""
import math


def _night(hour, start=19, end=9):
    if start > end:
        return hour >= start or hour < end
    return start <= hour < end


def brute_force_home(records, variant_number, positions, radius_m=1000.0, night=(19, 9)):
    """Top-3 (tower, score) by literally applying criterion 1-5 to raw records.

    ``positions`` maps tower_id -> (x, y) in meters.
    """
    towers = sorted({r.tower_id for r in records})

    def activities(t):
        return sum(1 for r in records if r.tower_id == t)

    def distinct_days(t):
        return len({r.timestamp.date() for r in records if r.tower_id == t})

    def night_activities(t):
        return sum(1 for r in records if r.tower_id == t and _night(r.timestamp.hour, *night))

    base = {1: activities, 2: distinct_days, 3: night_activities,
            4: activities, 5: night_activities}[variant_number]
    candidates = [t for t in towers if base(t) > 0]
    if not candidates:
        return None

    def dist(a, b):
        (xa, ya), (xb, yb) = positions[a], positions[b]
        return math.hypot(xa - xb, ya - yb)

    if variant_number in (4, 5):
        def score(t):
            return sum(base(u) for u in candidates if dist(t, u) <= radius_m)
    else:
        score = base
    ranked = sorted(candidates, key=lambda t: (-score(t), -activities(t), t))
    return [(t, score(t)) for t in ranked[:3]]


def gi_star_double_loop(values, positions, band_m):
    """Getis-Ord Gi* z-scores with binary distance-band weights, self included."""
    n = len(values)
    xbar = sum(values) / n
    s = math.sqrt(sum(v * v for v in values) / n - xbar * xbar)
    z = []
    for i in range(n):
        wsum = 0.0
        wsq = 0.0
        lag = 0.0
        for j in range(n):
            d = math.hypot(positions[i][0] - positions[j][0], positions[i][1] - positions[j][1])
            w = 1.0 if d <= band_m else 0.0
            wsum += w
            wsq += w * w
            lag += w * values[j]
        num = lag - xbar * wsum
        den = s * math.sqrt((n * wsq - wsum * wsum) / (n - 1))
        z.append(num / den if den > 0 else 0.0)
    return z


def pearson_by_hand(xs, ys):
    n = len(xs)
    mx = sum(xs) / n
    my = sum(ys) / n
    cov = sum((x - mx) * (y - my) for x, y in zip(xs, ys))
    vx = sum((x - mx) ** 2 for x in xs)
    vy = sum((y - my) ** 2 for y in ys)
    return cov / math.sqrt(vx * vy)


def random_user_month(rng, max_records=50, max_towers=16):
    """One random user-month on a 250 m lattice (so exact 1000 m distances occur).

    Returns (records, positions) with records built from ``conftest.rec``-style
    CdrRecord objects dated June 2007.
    """
    from datetime import datetime

    from cdrhome.cdr_core import CdrRecord, Direction, Kind

    n_towers = rng.randint(1, max_towers)
    cells = rng.sample([(x, y) for x in range(9) for y in range(9)], n_towers)
    positions = {f"T{k:02d}": (250.0 * x, 250.0 * y) for k, (x, y) in enumerate(cells)}
    ids = sorted(positions)
    weights = [rng.random() ** 2 for _ in ids]
    records = []
    for _ in range(rng.randint(1, max_records)):
        tower = rng.choices(ids, weights)[0]
        when = datetime(2007, 6, rng.randint(1, 30), rng.randint(0, 23), rng.randint(0, 59))
        kind = Kind.CALL if rng.random() < 0.65 else Kind.TEXT
        records.append(CdrRecord("u", when, tower, Direction.OUTGOING, kind,
                                 rng.randint(1, 300) if kind is Kind.CALL else 0))
    return records, positions
