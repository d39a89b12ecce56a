"""Seeded synthetic CDR generator with known home towers.

Every random draw for user ``i`` comes from its own generator seeded with
``(seed, stream, i)``, so output does not depend on how users are batched or
how many threads generate them.
"""
from __future__ import annotations

import dataclasses
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta
from typing import Iterator, Sequence

import numpy as np
import pandas as pd
from scipy.spatial import cKDTree

from .aggregate import TraceAggregator, TraceTable, night_mask
from .cdr_core import (CdrRecord, Direction, Kind, MonthWindow, TowerNetwork, check_night,
                       month_windows)
from .errors import ConfigError

_EPOCH_ORDINAL = date(1970, 1, 1).toordinal()

# relative activity per local hour, quiet at night and peaking in the evening
HOUR_PROFILE = np.array([0.5, 0.3, 0.2, 0.2, 0.2, 0.3, 0.7, 1.5, 3.0, 4.0, 4.5, 4.5,
                         5.0, 5.0, 4.8, 4.8, 5.0, 5.5, 6.0, 6.0, 5.5, 4.5, 3.0, 1.5])
ANCHOR_WEIGHTS = np.array([0.6, 0.25, 0.15])
CALL_SHARE = 0.65
MEAN_CALL_S = 90.0

_STREAM_NETWORK, _STREAM_USERS, _STREAM_EVENTS, _STREAM_RESORTS = 1, 2, 3, 4

REQUIRED_KEYS = ("seed", "n_towers", "extent_m", "n_users", "start", "end")


@dataclass(frozen=True)
class GeneratorConfig:
    seed: int = 42
    n_towers: int = 500
    extent_m: float = 300_000.0
    density_profile: str = "clustered"  # uniform | clustered
    clusters_k: int = 8
    cluster_spread_m: float = 15_000.0
    n_users: int = 10_000
    start: date = date(2007, 6, 1)
    end: date = date(2007, 8, 31)
    events_per_user_day: float = 4.0
    home_bias: float = 0.55
    night_home_boost: float = 1.5
    night_start_h: int = 19
    night_end_h: int = 9
    anchor_prob: float = 0.6
    n_nearby: int = 15
    anchor_pool: int = 30
    holiday: str = "none"  # none | summer
    holiday_displaced_fraction: float = 0.3
    holiday_months: tuple[str, ...] = ("2007-07", "2007-08")
    holiday_displacement_min_m: float = 100_000.0
    holiday_min_days: int = 7
    holiday_max_days: int = 21
    holiday_resorts: int = 20

    def __post_init__(self):
        if self.n_towers < 3:
            raise ConfigError("n_towers must be at least 3")
        if self.n_users < 1:
            raise ConfigError("n_users must be positive")
        if not self.extent_m > 0:
            raise ConfigError("extent_m must be positive")
        if self.density_profile not in ("uniform", "clustered"):
            raise ConfigError(f"density_profile must be uniform or clustered, got {self.density_profile!r}")
        if self.density_profile == "clustered" and (self.clusters_k < 1 or not self.cluster_spread_m > 0):
            raise ConfigError("clustered profile needs clusters_k >= 1 and cluster_spread_m > 0")
        for name in ("home_bias", "anchor_prob", "holiday_displaced_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.night_home_boost < 0 or self.events_per_user_day < 0:
            raise ConfigError("night_home_boost and events_per_user_day must be non-negative")
        if self.holiday not in ("none", "summer"):
            raise ConfigError(f"holiday must be none or summer, got {self.holiday!r}")
        if self.start > self.end:
            raise ConfigError("start after end")
        if not 1 <= self.holiday_min_days <= self.holiday_max_days:
            raise ConfigError("need 1 <= holiday_min_days <= holiday_max_days")
        if self.holiday_resorts < 1:
            raise ConfigError("holiday_resorts must be positive")
        if self.n_nearby < 1 or self.anchor_pool < 3:
            raise ConfigError("n_nearby >= 1 and anchor_pool >= 3 required")
        check_night(self.night_start_h, self.night_end_h)

    @property
    def period(self) -> list[MonthWindow]:
        return month_windows(self.start, self.end)

    @property
    def holiday_span(self) -> tuple[date, date] | None:
        """First and last day eligible for holidays, or None without holidays."""
        if self.holiday == "none" or self.holiday_displaced_fraction == 0:
            return None
        windows = [w for w in self.period if w.label in self.holiday_months]
        if not windows:
            return None
        return windows[0].start, windows[-1].end

    def replace(self, **changes) -> "GeneratorConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(v)
            elif isinstance(v, date):
                v = v.isoformat()
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, seed: int | None = None) -> "GeneratorConfig":
        values: dict[str, str] = {}
        for n, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"config line {n}: expected key=value")
            k, v = (s.strip() for s in line.split("=", 1))
            values[k] = v
        if seed is not None:
            values["seed"] = str(seed)
        missing = [k for k in REQUIRED_KEYS if k not in values]
        if missing:
            raise ConfigError(f"missing config key: {missing[0]}")
        fields = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for k, v in values.items():
            if k not in fields:
                raise ConfigError(f"unknown config key: {k}")
            default = fields[k].default
            try:
                if isinstance(default, bool):
                    kwargs[k] = v.lower() in ("1", "true", "yes")
                elif isinstance(default, int):
                    kwargs[k] = int(v)
                elif isinstance(default, float):
                    kwargs[k] = float(v)
                elif isinstance(default, date):
                    kwargs[k] = date.fromisoformat(v)
                elif isinstance(default, tuple):
                    kwargs[k] = tuple(s.strip() for s in v.split(",") if s.strip())
                else:
                    kwargs[k] = v
            except ValueError as exc:
                raise ConfigError(f"bad value for config key {k}: {v!r} ({exc})") from None
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path, seed: int | None = None) -> "GeneratorConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read(), seed)


def _rng(seed: int, stream: int, index: int = 0) -> np.random.Generator:
    return np.random.default_rng([seed, stream, index])


def _ids(prefix: str, n: int) -> list[str]:
    width = len(str(max(n - 1, 0)))
    return [f"{prefix}{i:0{width}d}" for i in range(n)]


def generate_network(config: GeneratorConfig) -> TowerNetwork:
    rng = _rng(config.seed, _STREAM_NETWORK)
    n, extent = config.n_towers, config.extent_m
    if config.density_profile == "uniform":
        xy = rng.uniform(0.0, extent, size=(n, 2))
    else:
        centers = rng.uniform(0.15 * extent, 0.85 * extent, size=(config.clusters_k, 2))
        which = rng.integers(0, config.clusters_k, size=n)
        xy = centers[which] + rng.normal(0.0, config.cluster_spread_m, size=(n, 2))
        xy = np.clip(xy, 0.0, extent)
    return TowerNetwork(_ids("T", n), xy)


def local_density(network: TowerNetwork, k: int = 5) -> np.ndarray:
    """Towers per square meter from the distance to the k-th nearest other tower."""
    k = min(k, len(network) - 1)
    d, _ = cKDTree(network.xy).query(network.xy, k=k + 1)
    dk = np.maximum(d[:, k], 1.0)
    return k / (np.pi * dk * dk)


@dataclass(frozen=True)
class UserPlan:
    user_id: str
    home: int
    anchors: tuple[int, ...]
    holiday_tower: int | None = None
    holiday_start: date | None = None
    holiday_end: date | None = None


@dataclass(frozen=True)
class GroundTruth:
    network: TowerNetwork
    users: tuple[UserPlan, ...]
    nearby: np.ndarray = field(repr=False)  # (n_towers, n_nearby) nearest other towers

    def homes(self) -> dict[str, str]:
        ids = self.network.ids
        return {u.user_id: ids[u.home] for u in self.users}

    def displaced(self) -> list[UserPlan]:
        return [u for u in self.users if u.holiday_tower is not None]

    def to_csv(self, path) -> None:
        ids = self.network.ids
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("user_id,home_tower_id\n")
            for u in self.users:
                fh.write(f"{u.user_id},{ids[u.home]}\n")

    def holidays_to_csv(self, path) -> None:
        ids = self.network.ids
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("user_id,holiday_tower_id,start,end\n")
            for u in self.displaced():
                fh.write(f"{u.user_id},{ids[u.holiday_tower]},{u.holiday_start},{u.holiday_end}\n")


def resort_towers(config: GeneratorConfig, network: TowerNetwork) -> np.ndarray:
    """Sorted tower indices that attract holiday makers."""
    rng = _rng(config.seed, _STREAM_RESORTS)
    k = min(config.holiday_resorts, len(network))
    return np.sort(rng.choice(len(network), size=k, replace=False))


def generate_users(config: GeneratorConfig, network: TowerNetwork) -> GroundTruth:
    n = len(network)
    density = local_density(network)
    cdf = np.cumsum(density / density.sum())
    tree = cKDTree(network.xy)
    k_pool = min(config.anchor_pool, n - 1)
    _, pool = tree.query(network.xy, k=k_pool + 1)
    pool = pool[:, 1:]
    k_near = min(config.n_nearby, n - 1)
    nearby = pool[:, :k_near] if k_near <= k_pool else tree.query(network.xy, k=k_near + 1)[1][:, 1:]
    span = config.holiday_span
    resorts = resort_towers(config, network)
    users = []
    for i, uid in enumerate(_ids("u", config.n_users)):
        rng = _rng(config.seed, _STREAM_USERS, i)
        home = min(int(np.searchsorted(cdf, rng.random(), side="right")), n - 1)
        n_anchors = int(rng.integers(1, 4))
        anchors = tuple(int(a) for a in rng.choice(pool[home], size=n_anchors, replace=False))
        displaced = rng.random() < config.holiday_displaced_fraction
        length = int(rng.integers(config.holiday_min_days, config.holiday_max_days + 1))
        u_start = rng.random()
        u_tower = rng.random()
        if span is None or not displaced:
            users.append(UserPlan(uid, home, anchors))
            continue
        d = np.hypot(network.xy[:, 0] - network.xy[home, 0], network.xy[:, 1] - network.xy[home, 1])
        far = resorts[d[resorts] >= config.holiday_displacement_min_m]
        if not len(far):
            far = np.flatnonzero(d >= config.holiday_displacement_min_m)
        if not len(far):
            raise ConfigError(f"no tower at least {config.holiday_displacement_min_m} m from the home "
                              f"of {uid}; extent too small for the holiday displacement")
        holiday_tower = int(far[min(int(u_tower * len(far)), len(far) - 1)])
        span_days = (span[1] - span[0]).days + 1
        length = min(length, span_days)
        first = span[0] + timedelta(days=int(u_start * (span_days - length + 1)))
        users.append(UserPlan(uid, home, anchors, holiday_tower, first,
                              first + timedelta(days=length - 1)))
    return GroundTruth(network, tuple(users), np.asarray(nearby))


@dataclass(frozen=True)
class EventBatch:
    """Columnar events for a contiguous block of users, ordered by (user, time)."""
    user: np.ndarray  # index into GroundTruth.users
    tower: np.ndarray
    day: np.ndarray  # date ordinal
    second: np.ndarray  # seconds since local midnight
    outgoing: np.ndarray
    call: np.ndarray
    duration: np.ndarray

    def __len__(self):
        return len(self.user)

    @property
    def hour(self) -> np.ndarray:
        return self.second // 3600

    @classmethod
    def concat(cls, parts: Sequence["EventBatch"]) -> "EventBatch":
        return cls(*(np.concatenate([getattr(p, f.name) for p in parts])
                     for f in dataclasses.fields(cls)))


def _user_events(config: GeneratorConfig, truth: GroundTruth, i: int, days: np.ndarray,
                 hour_cdf: np.ndarray) -> EventBatch:
    plan = truth.users[i]
    rng = _rng(config.seed, _STREAM_EVENTS, i)
    counts = rng.poisson(config.events_per_user_day, size=len(days))
    n = int(counts.sum())
    day = np.repeat(days, counts)
    hour = np.minimum(np.searchsorted(hour_cdf, rng.random(n), side="right"), 23)
    second = hour * 3600 + rng.integers(0, 3600, size=n)
    u_home, u_anchor, u_which, u_near = rng.random(n), rng.random(n), rng.random(n), rng.random(n)
    call = rng.random(n) < CALL_SHARE
    outgoing = rng.random(n) < 0.5
    duration = np.where(call, 1 + np.floor(rng.exponential(MEAN_CALL_S, size=n)).astype(np.int64), 0)

    night = night_mask(hour, config.night_start_h, config.night_end_h)
    p_home = np.where(night, min(1.0, config.home_bias * config.night_home_boost), config.home_bias)
    w = ANCHOR_WEIGHTS[:len(plan.anchors)]
    anchor_cdf = np.cumsum(w / w.sum())
    anchors = np.asarray(plan.anchors)
    anchor_t = anchors[np.minimum(np.searchsorted(anchor_cdf, u_which, side="right"), len(anchors) - 1)]
    k_near = truth.nearby.shape[1]
    near_pick = np.minimum((u_near * k_near).astype(np.int64), k_near - 1)
    near_t = truth.nearby[plan.home][near_pick]
    home_t = np.full(n, plan.home)
    if plan.holiday_tower is not None:
        away = (day >= plan.holiday_start.toordinal()) & (day <= plan.holiday_end.toordinal())
        home_t[away] = plan.holiday_tower
        near_t = np.where(away, truth.nearby[plan.holiday_tower][near_pick], near_t)
        anchor_t = np.where(away, near_t, anchor_t)
    tower = np.where(u_home < p_home, home_t, np.where(u_anchor < config.anchor_prob, anchor_t, near_t))
    order = np.lexsort((second, day))
    return EventBatch(np.full(n, i, dtype=np.int64), tower[order].astype(np.int64), day[order],
                      second[order].astype(np.int64), outgoing[order], call[order], duration[order])


def generate_events(config: GeneratorConfig, truth: GroundTruth, threads: int = 1,
                    batch_users: int = 1000) -> Iterator[EventBatch]:
    """Yield event batches of ``batch_users`` consecutive users, in user order."""
    days = np.arange(config.start.toordinal(), config.end.toordinal() + 1)
    hour_cdf = np.cumsum(HOUR_PROFILE / HOUR_PROFILE.sum())
    blocks = [range(a, min(a + batch_users, len(truth.users)))
              for a in range(0, len(truth.users), batch_users)]

    def build(block):
        return EventBatch.concat([_user_events(config, truth, i, days, hour_cdf) for i in block])

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            # bounded look-ahead keeps memory flat
            for k in range(0, len(blocks), threads):
                yield from pool.map(build, blocks[k:k + threads])
    else:
        for block in blocks:
            yield build(block)


def generate_cdr(config: GeneratorConfig, network: TowerNetwork, truth: GroundTruth,
                 threads: int = 1) -> Iterator[CdrRecord]:
    """Record stream ordered by (user, timestamp)."""
    ids = network.ids
    for batch in generate_events(config, truth, threads):
        for u, t, d, s, out, call, dur in zip(batch.user.tolist(), batch.tower.tolist(), batch.day.tolist(),
                                              batch.second.tolist(), batch.outgoing.tolist(),
                                              batch.call.tolist(), batch.duration.tolist()):
            ts = datetime.fromordinal(d) + timedelta(seconds=s)
            yield CdrRecord(truth.users[u].user_id, ts, ids[t],
                            Direction.OUTGOING if out else Direction.INCOMING,
                            Kind.CALL if call else Kind.TEXT, dur)


def batch_frame(batch: EventBatch, truth: GroundTruth) -> pd.DataFrame:
    user_ids = np.array([u.user_id for u in truth.users], dtype=object)
    seconds = (batch.day - _EPOCH_ORDINAL) * 86400 + batch.second
    stamps = np.datetime_as_string(seconds.astype("datetime64[s]"), unit="s")
    return pd.DataFrame({
        "user_id": user_ids[batch.user],
        "timestamp": stamps,
        "tower_id": np.array(truth.network.ids, dtype=object)[batch.tower],
        "direction": np.where(batch.outgoing, "out", "in"),
        "kind": np.where(batch.call, "call", "text"),
        "duration_s": batch.duration,
    })


def write_cdr_csv(path, config: GeneratorConfig, truth: GroundTruth, threads: int = 1) -> int:
    """Write the CDR CSV; returns the number of records."""
    n = 0
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("user_id,timestamp,tower_id,direction,kind,duration_s\n")
        for batch in generate_events(config, truth, threads):
            batch_frame(batch, truth).to_csv(fh, header=False, index=False, lineterminator="\n")
            n += len(batch)
    return n


def simulate_table(config: GeneratorConfig, truth: GroundTruth, windows: Sequence[MonthWindow] | None = None,
                   night_start: int = 19, night_end: int = 9, threads: int = 1) -> TraceTable:
    """Generate events straight into a trace table, skipping the CSV round trip."""
    agg = TraceAggregator(truth.network, windows or config.period, night_start, night_end)
    user_ids = np.array([u.user_id for u in truth.users], dtype=object)
    for batch in generate_events(config, truth, threads):
        codes = agg.user_codes(user_ids[batch.user])
        agg.add(codes, batch.tower, batch.day, batch.hour)
    return agg.finish()


def simulate(config: GeneratorConfig, threads: int = 1) -> tuple[TowerNetwork, GroundTruth, TraceTable]:
    network = generate_network(config)
    truth = generate_users(config, network)
    return network, truth, simulate_table(config, truth, threads=threads)
