"""Evaluation routines shared by the CLI, the scripts and the acceptance suite."""
from __future__ import annotations

from collections import defaultdict
from itertools import combinations
from typing import Iterable, Mapping, Sequence

import numpy as np

from .cdr_core import TowerNetwork
from .errors import UndefinedMetricError
from .hda import HomeDetection
from .metrics import PopulationVector, accuracy, csm, population_vector, smc, smc_by_month, truth_vector
from .uncertainty import SuThreshold, median, su_filter

ALL_MONTHS = "ALL"
MEAN_OF_MONTHS = "MEAN"


def by_month(detections: Iterable[HomeDetection]) -> dict[str, list[HomeDetection]]:
    out: dict[str, list[HomeDetection]] = defaultdict(list)
    for d in detections:
        out[d.month].append(d)
    return dict(sorted(out.items()))


def compare_rows(detections: Mapping[str, Sequence[HomeDetection]]) -> list[tuple]:
    """Pairwise SMC rows (month, algo_a, algo_b, smc, n_common).

    Each pair gets one row per month, a pooled ``ALL`` row and a ``MEAN`` row
    averaging the monthly values.
    """
    rows = []
    for a, b in combinations(detections, 2):
        pooled, n = smc(detections[a], detections[b])
        monthly = smc_by_month(detections[a], detections[b])
        for month, (value, n_m) in monthly.items():
            rows.append((month, a, b, value, n_m))
        rows.append((ALL_MONTHS, a, b, pooled, n))
        if monthly:
            rows.append((MEAN_OF_MONTHS, a, b, float(np.mean([v for v, _ in monthly.values()])),
                         sum(n_m for _, n_m in monthly.values())))
    return rows


def validation_row(detections: Sequence[HomeDetection], reference: PopulationVector,
                   network: TowerNetwork, homes: Mapping[str, str] | None) -> tuple[float, int, float | None]:
    """(csm_deg, n_detections, accuracy-or-None) of one detection set against the reference."""
    if not detections:
        raise UndefinedMetricError("no detections to validate")
    angle = csm(population_vector(detections, network), reference)
    acc = accuracy(detections, homes)[0] if homes is not None else None
    return angle, len(detections), acc


def validate_rows(detections: Mapping[str, Sequence[HomeDetection]], reference: PopulationVector,
                  network: TowerNetwork, homes: Mapping[str, str] | None = None) -> list[tuple]:
    """Rows (month, algorithm, csm_deg, n_detections, accuracy), per month and pooled."""
    rows = []
    for algo, dets in detections.items():
        if not dets:
            raise UndefinedMetricError(f"no detections for {algo}")
        for month, ds in by_month(dets).items():
            rows.append((month, algo, *validation_row(ds, reference, network, homes)))
        rows.append((ALL_MONTHS, algo, *validation_row(dets, reference, network, homes)))
    return rows


def filter_rows(detections: Mapping[str, Sequence[HomeDetection]], thresholds_km: Sequence[float]
                ) -> tuple[dict[tuple[str, float], list[HomeDetection]], list[tuple]]:
    """Apply every threshold to every algorithm.

    Returns the kept detections keyed by (algorithm, threshold_km) and report
    rows (algorithm, month, threshold_km, kept, dropped).
    """
    kept_sets, rows = {}, []
    for algo, dets in detections.items():
        for thr in thresholds_km:
            kept, _ = su_filter(dets, SuThreshold.km(thr))
            kept_sets[(algo, thr)] = kept
            kept_by_month = by_month(kept)
            for month, ds in by_month(dets).items():
                k = len(kept_by_month.get(month, ()))
                rows.append((algo, month, thr, k, len(ds) - k))
    return kept_sets, rows


def su_csm_points(detections: Mapping[str, Sequence[HomeDetection]], reference: PopulationVector,
                  network: TowerNetwork) -> dict[tuple[str, str], tuple[float, float]]:
    """(algorithm, month) -> (median SU, CSM vs reference)."""
    points = {}
    for algo, dets in detections.items():
        for month, ds in by_month(dets).items():
            points[(algo, month)] = (median([d.su_m for d in ds]),
                                     csm(population_vector(ds, network), reference))
    return points


def filter_effect(detections: Mapping[str, Sequence[HomeDetection]], homes: Mapping[str, str],
                  network: TowerNetwork, thresholds_km: Sequence[float]) -> list[tuple]:
    """Accuracy and CSM-vs-truth before and after SU filtering.

    Rows (algorithm, month, threshold_km, n, accuracy, csm_deg); ``threshold_km``
    is None for the unfiltered set and ``month`` is ``ALL`` for the pooled run.
    """
    reference = truth_vector(homes, network)
    rows = []
    for algo, dets in detections.items():
        scopes = [(ALL_MONTHS, list(dets))] + list(by_month(dets).items())
        for month, ds in scopes:
            for thr in (None, *thresholds_km):
                kept = ds if thr is None else su_filter(ds, SuThreshold.km(thr))[0]
                if not kept:
                    rows.append((algo, month, thr, 0, None, None))
                    continue
                rows.append((algo, month, thr, len(kept), accuracy(kept, homes)[0],
                             csm(population_vector(kept, network), reference)))
    return rows
