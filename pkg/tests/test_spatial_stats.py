import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from cdrhome.cdr_core import TowerNetwork
from cdrhome.errors import ConfigError, DegenerateFieldError
from cdrhome.metrics import PopulationVector
from cdrhome.spatial_stats import COLD, HOT, NEUTRAL, gi_star, z_critical

from oracles import gi_star_double_loop


def grid(n=5, step=1000.0):
    ids = [f"G{r}{c}" for r in range(n) for c in range(n)]
    return TowerNetwork(ids, [(c * step, r * step) for r in range(n) for c in range(n)])


def values_for(net, mapping, default):
    return PopulationVector(net.ids, np.array([mapping.get(t, default) for t in net.ids], dtype=float))


CROSS = {"G22": 100, "G12": 100, "G32": 100, "G21": 100, "G23": 100}


def test_center_cluster_is_hot():
    net = grid()
    res = gi_star(values_for(net, CROSS, 1), net, band_m=1000)
    oracle = gi_star_double_loop(res.values.tolist(), net.xy.tolist(), 1000)
    assert np.max(np.abs(res.z - oracle)) <= 1e-9
    assert res.by_tower()["G22"][1] == HOT
    assert res.z[net.idx("G22")] >= 1.645


def test_inverted_cluster_is_cold_and_sign_symmetric():
    net = grid()
    hot = gi_star(values_for(net, CROSS, 1), net, band_m=1000)
    # reflected field: low cluster in a high background
    cold = gi_star(PopulationVector(net.ids, 200 - hot.values), net, band_m=1000)
    assert cold.by_tower()["G22"][1] == COLD
    assert np.allclose(cold.z, -hot.z, atol=1e-12)
    oracle = gi_star_double_loop(cold.values.tolist(), net.xy.tolist(), 1000)
    assert np.max(np.abs(cold.z - oracle)) <= 1e-9


def test_constant_field_degenerate():
    net = grid()
    with pytest.raises(DegenerateFieldError):
        gi_star(values_for(net, {}, 7), net)
    with pytest.raises(DegenerateFieldError):
        gi_star(values_for(grid(1), {}, 1), grid(1))


def test_confidence_levels():
    assert z_critical(0.90) == 1.645 and z_critical(0.95) == 1.96 and z_critical(0.99) == 2.576
    with pytest.raises(ConfigError):
        z_critical(0.8)


def test_full_band_neighborhood_is_neutral():
    net = grid(3)
    res = gi_star(values_for(net, {"G11": 9}, 1), net, band_m=1e6)
    assert np.all(res.z == 0) and set(res.classification) == {NEUTRAL}


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 100), st.integers(0, 2**32 - 1), st.floats(300, 5000))
def test_matches_double_loop(n, seed, band):
    rng = np.random.default_rng(seed)
    xy = rng.uniform(0, 10_000, size=(n, 2))
    vals = rng.poisson(3, size=n).astype(float)
    assume(np.ptp(vals) > 0)
    net = TowerNetwork([f"T{k:03d}" for k in range(n)], xy)
    res = gi_star(PopulationVector(net.ids, vals), net, band_m=band)
    oracle = gi_star_double_loop(vals.tolist(), xy.tolist(), band)
    assert np.max(np.abs(res.z - np.array(oracle))) <= 1e-9


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-100, 100), st.floats(0.01, 100))
def test_location_scale_invariance(seed, shift, scale):
    rng = np.random.default_rng(seed)
    net = grid()
    vals = rng.uniform(0, 10, size=25)
    base = gi_star(PopulationVector(net.ids, vals), net, band_m=1500)
    moved = gi_star(PopulationVector(net.ids, vals * scale + abs(shift)), net, band_m=1500)
    assert np.allclose(base.z, moved.z, atol=1e-9)
    hot95 = {t for t, (_, c) in base.at(0.95).by_tower().items() if c == HOT}
    hot90 = {t for t, (_, c) in base.at(0.90).by_tower().items() if c == HOT}
    assert hot95 <= hot90
