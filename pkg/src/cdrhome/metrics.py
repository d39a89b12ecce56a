"""Agreement between algorithms (SMC) and tower-level pattern validation (CSM)."""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np

from .cdr_core import TowerNetwork
from .errors import DataError, UndefinedMetricError
from .hda import HomeDetection


def _homes(detections: Iterable[HomeDetection]) -> dict[tuple[str, str], str]:
    homes = {}
    for d in detections:
        if d.key in homes:
            raise DataError(f"duplicate detection for {d.key}")
        homes[d.key] = d.l1
    return homes


def smc(detections_a: Iterable[HomeDetection], detections_b: Iterable[HomeDetection]) -> tuple[float, int]:
    """Fraction of (user, month) keys detected by both algorithms with the same L1 tower.

    Keys where either side failed to detect are left out. Returns (smc, n_common).
    """
    a, b = _homes(detections_a), _homes(detections_b)
    common = a.keys() & b.keys()
    if not common:
        raise UndefinedMetricError("no (user, month) detected by both algorithms")
    agree = sum(a[k] == b[k] for k in common)
    return agree / len(common), len(common)


def smc_by_month(detections_a: Iterable[HomeDetection], detections_b: Iterable[HomeDetection]
                 ) -> dict[str, tuple[float, int]]:
    """SMC per month; months without common detections are omitted."""
    a, b = defaultdict(list), defaultdict(list)
    for d in detections_a:
        a[d.month].append(d)
    for d in detections_b:
        b[d.month].append(d)
    out = {}
    for month in sorted(a.keys() & b.keys()):
        try:
            out[month] = smc(a[month], b[month])
        except UndefinedMetricError:
            continue
    return out


@dataclass(frozen=True)
class PopulationVector:
    towers: tuple[str, ...]
    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=float)
        if counts.shape != (len(self.towers),):
            raise ValueError("counts must align with the tower list")
        if not np.isfinite(counts).all() or (counts < 0).any():
            raise ValueError("counts must be finite and non-negative")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> float:
        return float(self.counts.sum())

    def is_zero(self) -> bool:
        return not self.counts.any()

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.towers, self.counts.tolist()))

    @classmethod
    def from_mapping(cls, values: Mapping[str, float], network: TowerNetwork, fill: float = 0.0
                     ) -> "PopulationVector":
        for t in values:
            network.idx(t)
        return cls(network.ids, np.array([values.get(t, fill) for t in network.ids], dtype=float))


def population_vector(detections: Iterable[HomeDetection], network: TowerNetwork) -> PopulationVector:
    """Number of detected homes per tower over the full network (zeros included)."""
    counts = np.zeros(len(network))
    for d in detections:
        counts[network.idx(d.l1)] += 1
    return PopulationVector(network.ids, counts)


def truth_vector(homes: Mapping[str, str], network: TowerNetwork) -> PopulationVector:
    """Population vector from a user -> true home tower mapping."""
    counts = np.zeros(len(network))
    for tower in homes.values():
        counts[network.idx(tower)] += 1
    return PopulationVector(network.ids, counts)


def csm(x: PopulationVector, y: PopulationVector) -> float:
    """Angle in degrees between two population vectors."""
    if x.towers != y.towers:
        raise DataError("population vectors use different tower orders")
    nx, ny = np.linalg.norm(x.counts), np.linalg.norm(y.counts)
    if nx == 0 or ny == 0:
        raise UndefinedMetricError("CSM undefined for a zero population vector")
    # same angle as the clamped arccos of the cosine, but without its loss of
    # precision near 0 degrees
    ux, uy = x.counts / nx, y.counts / ny
    angle = 2.0 * math.atan2(float(np.linalg.norm(ux - uy)), float(np.linalg.norm(ux + uy)))
    return abs(math.degrees(angle))


def accuracy(detections: Iterable[HomeDetection], homes: Mapping[str, str]) -> tuple[float, int]:
    """Share of detections whose L1 equals the user's true home. Returns (accuracy, n)."""
    n = hits = 0
    for d in detections:
        n += 1
        hits += homes.get(d.user_id) == d.l1
    if n == 0:
        raise UndefinedMetricError("accuracy undefined without detections")
    return hits / n, n


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-D and equally long")
    if len(x) < 3:
        raise UndefinedMetricError("Pearson correlation needs at least 3 points")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0 or syy == 0:
        raise UndefinedMetricError("zero variance in a coordinate")
    return float(dx @ dy) / math.sqrt(sxx * syy)


def su_csm_correlation(points: Mapping[Hashable, tuple[float, float]],
                       exclude: Iterable[Hashable] = ()) -> tuple[float, int]:
    """Pearson R between median SU and CSM over keyed points, minus excluded keys.

    Keys are usually (algorithm, month) tuples; an excluded entry may also be a
    bare month or algorithm label, which drops every point carrying it.
    """
    excluded = set(exclude)

    def dropped(key):
        if key in excluded:
            return True
        return isinstance(key, tuple) and any(part in excluded for part in key)

    kept = [v for k, v in sorted(points.items(), key=lambda kv: str(kv[0])) if not dropped(k)]
    r = pearson([p[0] for p in kept], [p[1] for p in kept])
    return r, len(kept)
