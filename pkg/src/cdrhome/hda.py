"""Home detection algorithms: rank a user's towers under one of five criteria."""
from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np

from .cdr_core import TowerNetwork, UserMonthTrace, check_night
from .errors import ConfigError


class Variant(Enum):
    MAX_ACTIVITIES = (1, "MaxActivities")
    MAX_DISTINCT_DAYS = (2, "MaxDistinctDays")
    NIGHT_WINDOW = (3, "NightWindow")
    SPATIAL_PERIMETER = (4, "SpatialPerimeter")
    NIGHT_WINDOW_SPATIAL_PERIMETER = (5, "NightWindowSpatialPerimeter")

    def __init__(self, number, label):
        self.number = number
        self.label = label

    @property
    def uses_night(self) -> bool:
        return self in (Variant.NIGHT_WINDOW, Variant.NIGHT_WINDOW_SPATIAL_PERIMETER)

    @property
    def grouped(self) -> bool:
        return self in (Variant.SPATIAL_PERIMETER, Variant.NIGHT_WINDOW_SPATIAL_PERIMETER)

    @classmethod
    def parse(cls, text: str) -> "Variant":
        key = text.strip()
        for v in cls:
            if key in (v.label, str(v.number), v.name) or key.lower() == v.label.lower():
                return v
        raise ConfigError(f"unknown algorithm {text!r}; expected 1-5 or one of "
                          + ", ".join(v.label for v in cls))


ALL_VARIANTS = tuple(Variant)


def parse_algorithms(text: str) -> list[Variant]:
    if text.strip().lower() == "all":
        return list(ALL_VARIANTS)
    out = []
    for part in text.split(","):
        v = Variant.parse(part)
        if v not in out:
            out.append(v)
    return out


@dataclass(frozen=True)
class AlgorithmSpec:
    variant: Variant
    night_start_h: int = 19
    night_end_h: int = 9
    radius_m: float = 1000.0

    def __post_init__(self):
        if not self.radius_m > 0:
            raise ConfigError("radius_m must be positive")
        check_night(self.night_start_h, self.night_end_h)

    @property
    def name(self) -> str:
        return self.variant.label


@dataclass(frozen=True)
class HomeDetection:
    user_id: str
    month: str
    algorithm: str
    ranked: tuple[tuple[str, int], ...]
    su_m: float | None = None

    def __post_init__(self):
        if not 1 <= len(self.ranked) <= 3:
            raise ValueError("a detection ranks one to three towers")
        scores = [p for _, p in self.ranked]
        if any(p <= 0 for p in scores) or scores != sorted(scores, reverse=True):
            raise ValueError(f"scores must be positive and non-increasing: {scores}")
        if len({t for t, _ in self.ranked}) != len(self.ranked):
            raise ValueError("ranked towers must be distinct")

    @property
    def key(self) -> tuple[str, str]:
        return self.user_id, self.month

    @property
    def l1(self) -> str:
        return self.ranked[0][0]

    @property
    def p1(self) -> int:
        return self.ranked[0][1]

    @property
    def has_l2(self) -> bool:
        return len(self.ranked) >= 2

    @property
    def has_l3(self) -> bool:
        return len(self.ranked) >= 3

    def with_su(self, su_m: float) -> "HomeDetection":
        return replace(self, su_m=su_m)


def group_scores(base: Mapping[str, float], network: TowerNetwork, radius_m: float) -> dict[str, float]:
    """Sum each tower's score with the scores of all scored towers within ``radius_m``."""
    grouped = {}
    for t in base:
        grouped[t] = sum(base[u] for u in base if network.distance(t, u) <= radius_m)
    return grouped


def score_towers(trace: UserMonthTrace, spec: AlgorithmSpec, network: TowerNetwork) -> dict[str, int]:
    if (trace.night_start, trace.night_end) != (spec.night_start_h, spec.night_end_h) and spec.variant.uses_night:
        raise ConfigError("trace was built with a different night window than the algorithm spec")
    v = spec.variant
    if v.uses_night:
        base = {t: n for t, n in trace.night_counts().items() if n > 0}
    elif v is Variant.MAX_DISTINCT_DAYS:
        base = trace.distinct_days()
    else:
        base = trace.totals()
    if v.grouped:
        for t in base:
            network.idx(t)
        base = group_scores(base, network, spec.radius_m)
    return base


def rank_towers(scores: Mapping[str, int], totals: Mapping[str, int]) -> list[tuple[str, int]]:
    """Score descending; ties go to the higher raw activity count, then the smaller tower id."""
    return sorted(scores.items(), key=lambda kv: (-kv[1], -totals[kv[0]], kv[0]))


def detect_home(trace: UserMonthTrace, spec: AlgorithmSpec, network: TowerNetwork) -> HomeDetection | None:
    scores = score_towers(trace, spec, network)
    if not scores:
        return None
    ranked = rank_towers(scores, trace.totals())[:3]
    return HomeDetection(trace.user_id, trace.month.label, spec.name, tuple(ranked))


@dataclass(frozen=True)
class DetectionCounts:
    homes: int
    with_l2: int
    with_l3: int

    @property
    def pct_l2(self) -> float:
        return 100.0 * self.with_l2 / self.homes if self.homes else 0.0

    @property
    def pct_l3(self) -> float:
        return 100.0 * self.with_l3 / self.homes if self.homes else 0.0

    @classmethod
    def of(cls, detections: Iterable[HomeDetection]) -> "DetectionCounts":
        homes = l2 = l3 = 0
        for d in detections:
            homes += 1
            l2 += d.has_l2
            l3 += d.has_l3
        return cls(homes, l2, l3)


def detection_counts(detections: Iterable[HomeDetection],
                     algorithms: Sequence[str] = ()) -> dict[str, DetectionCounts]:
    """Per-algorithm number of homes and of detections with an L2 / L3 candidate."""
    by_algo: dict[str, list[HomeDetection]] = {a: [] for a in algorithms}
    for d in detections:
        by_algo.setdefault(d.algorithm, []).append(d)
    return {a: DetectionCounts.of(ds) for a, ds in by_algo.items()}


SHARE_PERCENTILES = (5, 25, 50, 75, 95)


def top_shares(trace: UserMonthTrace, k: int = 3) -> np.ndarray:
    counts = np.sort(np.fromiter((s.total for s in trace.towers.values()), dtype=float))[::-1]
    shares = np.zeros(k)
    top = counts[:k] / counts.sum()
    shares[:len(top)] = top
    return shares


def share_percentiles(shares: np.ndarray, percentiles: Sequence[float] = SHARE_PERCENTILES
                      ) -> dict[int, dict[float, float]]:
    """Percentiles of an (n_traces, k) share matrix, keyed rank -> percentile -> share."""
    shares = np.asarray(shares, dtype=float)
    if shares.ndim != 2 or len(shares) == 0:
        raise ValueError("need at least one trace")
    table = np.percentile(shares, percentiles, axis=0)
    return {rank + 1: {p: float(table[i, rank]) for i, p in enumerate(percentiles)}
            for rank in range(shares.shape[1])}


def top_share_percentiles(traces: Iterable[UserMonthTrace],
                          percentiles: Sequence[float] = SHARE_PERCENTILES) -> dict[int, dict[float, float]]:
    """Distribution of the share of a user's activity in their top-1/2/3 towers.

    Users with fewer than three towers contribute a share of 0 for the missing ranks.
    """
    shares = [top_shares(t) for t in traces]
    return share_percentiles(np.array(shares).reshape(-1, 3), percentiles)
