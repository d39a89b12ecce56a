"""Spatial Uncertainty of detected homes and SU-based filtering."""
from __future__ import annotations

import statistics
from collections import defaultdict
from dataclasses import dataclass
from typing import Callable, Hashable, Iterable, Sequence

from .cdr_core import TowerNetwork
from .errors import ConfigError, DataError
from .hda import HomeDetection

DEFAULT_THRESHOLDS_KM = (10, 30, 50, 70)


@dataclass(frozen=True)
class SuThreshold:
    max_su_m: float

    def __post_init__(self):
        if not self.max_su_m > 0:
            raise ConfigError("SU threshold must be positive")

    @classmethod
    def km(cls, value: float) -> "SuThreshold":
        return cls(value * 1000.0)


def su_value(p1: float, competitors: Iterable[tuple[float, float]]) -> float:
    """Sum of (p_k / p1) * d_k / 2 over (score, distance) competitor pairs."""
    if not p1 > 0:
        raise ValueError("p1 must be positive")
    su = 0.0
    for pk, dk in competitors:
        su += (pk / p1) * (dk / 2)
    return su


def spatial_uncertainty(detection: HomeDetection, network: TowerNetwork) -> float:
    """SU in meters of the L1 choice against the available L2/L3 candidates (0 when none)."""
    l1, p1 = detection.ranked[0]
    return su_value(p1, ((pk, network.distance(l1, lk)) for lk, pk in detection.ranked[1:]))


def attach_su(detections: Iterable[HomeDetection], network: TowerNetwork) -> list[HomeDetection]:
    return [d.with_su(spatial_uncertainty(d, network)) for d in detections]


def su_filter(detections: Iterable[HomeDetection], threshold: SuThreshold
              ) -> tuple[list[HomeDetection], int]:
    """Keep detections with SU strictly below the threshold, preserving order."""
    kept, dropped = [], 0
    for d in detections:
        if d.su_m is None:
            raise DataError(f"detection {d.user_id}/{d.month}/{d.algorithm} has no SU")
        if d.su_m < threshold.max_su_m:
            kept.append(d)
        else:
            dropped += 1
    return kept, dropped


def median(values: Sequence[float]) -> float:
    return float(statistics.median(values))


def su_summary(detections: Iterable[HomeDetection],
               key: Callable[[HomeDetection], Hashable] = lambda d: (d.algorithm, d.month),
               ) -> dict[Hashable, tuple[float, int]]:
    """Median SU and group size per group key (algorithm x month by default).

    Groups come back sorted by key; groups without detections are absent.
    """
    groups: dict[Hashable, list[float]] = defaultdict(list)
    for d in detections:
        if d.su_m is None:
            raise DataError(f"detection {d.user_id}/{d.month}/{d.algorithm} has no SU")
        groups[key(d)].append(d.su_m)
    return {k: (median(v), len(v)) for k, v in sorted(groups.items())}


def su_by_tower(detections: Iterable[HomeDetection]) -> dict[str, tuple[float, int]]:
    """Median SU of detections grouped by their L1 tower."""
    return su_summary(detections, key=lambda d: d.l1)
