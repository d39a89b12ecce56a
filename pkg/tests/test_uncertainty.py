import math

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from cdrhome.aggregate import batch_su, detect_all
from cdrhome.cdr_core import TowerNetwork, build_trace
from cdrhome.errors import ConfigError, DataError
from cdrhome.hda import ALL_VARIANTS, AlgorithmSpec, HomeDetection, Variant, detect_home
from cdrhome.synthgen import GeneratorConfig, simulate
from cdrhome.uncertainty import (
    DEFAULT_THRESHOLDS_KM, SuThreshold, attach_su, spatial_uncertainty, su_by_tower, su_filter,
    su_summary,
)

from conftest import JUNE


def det(ranked, su=None, user="u", algo="MaxActivities", month="2007-06"):
    return HomeDetection(user, month, algo, tuple(ranked), su)


def test_abc_su_300m(abc_records, triangle):
    d = detect_home(build_trace(abc_records, JUNE), AlgorithmSpec(Variant.MAX_ACTIVITIES), triangle)
    assert abs(spatial_uncertainty(d, triangle) - 300.0) <= 1e-9


def test_l1_only_is_zero(triangle):
    assert spatial_uncertainty(det([("A", 7)]), triangle) == 0.0


def test_single_competitor(triangle):
    assert spatial_uncertainty(det([("A", 4), ("B", 2)]), triangle) == 250.0


def test_filter_examples():
    dets = [det([("A", 1)], 5000.0, "a"), det([("A", 1)], 40000.0, "b")]
    kept, dropped = su_filter(dets, SuThreshold.km(30))
    assert [d.user_id for d in kept] == ["a"] and dropped == 1
    assert su_filter(dets, SuThreshold.km(70)) == (dets, 0)
    assert su_filter(dets, SuThreshold(40000.0))[1] == 1  # strict inequality
    assert DEFAULT_THRESHOLDS_KM == (10, 30, 50, 70)


def test_filter_requires_su():
    with pytest.raises(DataError):
        su_filter([det([("A", 1)])], SuThreshold.km(10))
    with pytest.raises(ConfigError):
        SuThreshold(0)


def test_summary_medians():
    dets = [det([("A", 1)], v, f"u{k}") for k, v in enumerate([100.0, 300.0, 500.0])]
    assert su_summary(dets) == {("MaxActivities", "2007-06"): (300.0, 3)}
    assert su_summary(dets[:2])[("MaxActivities", "2007-06")] == (200.0, 2)
    assert su_summary([]) == {}
    assert su_by_tower(dets) == {"A": (300.0, 3)}


def test_batch_su_matches_scalar():
    net = TowerNetwork(["A", "B", "C", "D"], [(0, 0), (1000, 0), (0, 7000), (123.4, 567.8)])
    rows = [[("A", 10), ("B", 5), ("C", 1)], [("D", 3), ("A", 3)], [("C", 9)], [("B", 4), ("D", 4), ("C", 2)]]
    towers = np.full((len(rows), 3), -1)
    scores = np.zeros((len(rows), 3), dtype=np.int64)
    for i, r in enumerate(rows):
        for k, (t, p) in enumerate(r):
            towers[i, k], scores[i, k] = net.idx(t), p
    expected = [spatial_uncertainty(det(r), net) for r in rows]
    assert batch_su(towers, scores, net).tolist() == expected


def test_threads_do_not_change_detections():
    cfg = GeneratorConfig(seed=5, n_towers=60, extent_m=60_000, n_users=300, holiday="summer",
                          holiday_displacement_min_m=20_000)
    _, _, table = simulate(cfg)
    specs = [AlgorithmSpec(v) for v in ALL_VARIANTS]
    one, eight = detect_all(table, specs, threads=1), detect_all(table, specs, threads=8)
    assert list(one) == list(eight)
    for a, b in zip(one.values(), eight.values()):
        for f in ("user", "month", "towers", "scores", "su"):
            assert np.array_equal(getattr(a, f), getattr(b, f))
        ref = attach_su(a.to_detections(table), table.network)
        assert [d.su_m for d in ref] == a.su.tolist()


# --- properties ----------------------------------------------------------------

points = st.tuples(st.floats(-5e4, 5e4), st.floats(-5e4, 5e4))
ranked_st = st.lists(st.integers(1, 100), min_size=1, max_size=3).map(lambda ps: sorted(ps, reverse=True))


@given(st.lists(points, min_size=3, max_size=3, unique=True), ranked_st,
       st.sampled_from([0.5, 2.0, 4.0, 1000.0]))
def test_su_scales_linearly(xy, ps, c):
    net = TowerNetwork(["A", "B", "C"], xy)
    d = det(list(zip("ABC", ps)))
    su, su_c = spatial_uncertainty(d, net), spatial_uncertainty(d, net.scaled(c))
    assert su >= 0
    assert su_c == pytest.approx(c * su, rel=1e-12, abs=1e-9)


@given(st.lists(points, min_size=3, max_size=3, unique=True), ranked_st, st.integers(1, 20))
def test_su_monotone_in_p2_and_p1(xy, ps, bump):
    assume(len(ps) >= 2)
    net = TowerNetwork(["A", "B", "C"], xy)
    base = spatial_uncertainty(det(list(zip("ABC", ps))), net)
    p2_up = min(ps[0], ps[1] + bump)
    assert spatial_uncertainty(det(list(zip("ABC", [ps[0], p2_up] + ps[2:]))), net) >= base
    assert spatial_uncertainty(det(list(zip("ABC", [ps[0] + bump] + ps[1:]))), net) <= base


@given(st.lists(st.floats(0, 1e5), max_size=30), st.floats(1, 1e5), st.floats(1, 1e5))
def test_filters_compose(sus, t1, t2):
    dets = [det([("A", 1)], s, f"u{k}") for k, s in enumerate(sus)]
    once = su_filter(dets, SuThreshold(min(t1, t2)))[0]
    twice = su_filter(su_filter(dets, SuThreshold(t2))[0], SuThreshold(t1))[0]
    assert once == twice
    assert su_filter(dets, SuThreshold(math.inf))[0] == dets
