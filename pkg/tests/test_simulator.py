import dataclasses

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sdforge.experiment import ConfigError, baseline_point, bundled_path, load_experiment
from sdforge.simulator import (PathProfile, evaluate, normalize_features, oracle_box_simulator,
                               oracle_ring_simulator, run_scenario, simulate, stress_surrogate)

# Reference values from an independent 40-digit evaluation of the closed form.
GOLDEN = [
    ((0.0, 0.0, 0.0, 3.12), 0.07654598904141084256),
    ((20.0, 40.0, 15.0, 4.0), 1.79325064532131441824),
    ((100.0, 0.0, 0.0, 5.0), -0.56418216364545498409),
]
NORREBRO_BASELINE = (0.89048582694525133114, 0.25664262081224157099, -0.63384320613300976015)

pct = st.floats(0, 100, allow_nan=False)
ext = st.floats(1, 5, allow_nan=False)


@pytest.mark.parametrize("args,expected", GOLDEN)
def test_surrogate_golden(args, expected):
    assert stress_surrogate(*args) == pytest.approx(expected, abs=1e-14)


def test_surrogate_vectorized_matches_scalar():
    args = np.array([a for a, _ in GOLDEN]).T
    np.testing.assert_allclose(stress_surrogate(*args), [e for _, e in GOLDEN], atol=1e-14)


@pytest.mark.parametrize("args", [(-1, 0, 0, 3), (0, 101, 0, 3), (0, 0, 0, 0.5), (0, 0, 0, 5.5), (np.nan, 0, 0, 3)])
def test_surrogate_domain(args):
    with pytest.raises(ValueError):
        stress_surrogate(*args)


def test_surrogate_monotone_in_building_and_person_on_grid():
    g = np.linspace(0, 100, 20)
    eg = np.linspace(1, 5, 20)
    v, b, p, e = np.meshgrid(g, g, g, eg, indexing="ij")
    s = stress_surrogate(v, b, p, e)
    assert np.all(np.diff(s, axis=1) > 0)
    assert np.all(np.diff(s, axis=2) > 0)


@given(pct, pct, pct, ext)
def test_surrogate_bounded(v, b, p, e):
    assert abs(stress_surrogate(v, b, p, e)) <= 2.0 + 1.5 + 1.8 + 0.35


def test_vegetation_non_monotone_only_where_sin_term_active():
    v = np.arange(0, 100.01, 0.5)
    low = stress_surrogate(v, 10.0, 10.0, 2.6)
    assert np.all(np.diff(low) < 0)
    high = stress_surrogate(v, 60.0, 10.0, 4.3)
    assert np.any(np.diff(high) > 0)


def test_vulnerable_futures_exist_only_at_high_building_and_extraversion():
    v = np.arange(0, 85.01, 0.5)
    hi = stress_surrogate(v + 15, 50.0, 10.0, 4.3) - stress_surrogate(v, 50.0, 10.0, 4.3)
    lo = stress_surrogate(v + 15, 15.0, 10.0, 2.6) - stress_surrogate(v, 15.0, 10.0, 2.6)
    assert np.any(hi >= 0)
    assert np.all(lo < 0)


@pytest.mark.parametrize("inp,out", [
    ((30, 40, 10, 20), (30, 40, 10, 20)),
    ((50, 50, 25, 0), (40, 40, 20, 0)),
    ((10, 20, 5, 0), (10, 20, 5, 65)),
])
def test_normalize_examples(inp, out):
    prof = normalize_features(*inp)
    assert (prof.vegetation, prof.building, prof.person, prof.filler) == pytest.approx(out, abs=1e-12)


def test_normalize_rejects_negative():
    with pytest.raises(ValueError):
        normalize_features(-1, 10, 10, 10)


@given(pct, pct, pct, pct)
def test_normalize_sums_to_100_and_idempotent(v, b, p, f):
    a = normalize_features(v, b, p, f)
    assert a.vegetation + a.building + a.person + a.filler == pytest.approx(100.0, abs=1e-9)
    again = normalize_features(a.vegetation, a.building, a.person, a.filler)
    assert dataclasses.astuple(again) == pytest.approx(dataclasses.astuple(a), abs=1e-9)


def test_profile_must_sum_to_100():
    with pytest.raises(ValueError):
        PathProfile(10, 10, 10, 10)


def test_norrebro_baseline_outcome(norrebro):
    out = run_scenario(norrebro, baseline_point(norrebro))
    assert (out.stress_baseline, out.stress_policy, out.delta) == pytest.approx(NORREBRO_BASELINE, abs=1e-14)
    assert out.delta < 0


@given(st.integers(0, 10_000))
def test_zero_lever_gives_zero_delta(seed):
    exp = load_experiment(bundled_path("hellerup"), ["lever.delta=0"])
    rng = np.random.default_rng(seed)
    pts = rng.uniform(exp.space.lows, exp.space.highs, size=(5, 3))
    out = evaluate(exp, pts)
    assert np.array_equal(out.stress_policy, out.stress_baseline)
    assert np.all(out.delta == 0)
    assert simulate(exp, pts).labels.all()


def test_labels_follow_rule(norrebro):
    rng = np.random.default_rng(1)
    pts = rng.uniform(norrebro.space.lows, norrebro.space.highs, size=(300, 3))
    data = simulate(norrebro, pts)
    assert np.array_equal(data.labels, data.outputs >= 0)


def test_run_scenario_rejects_other_simulators(oracle_box):
    with pytest.raises(ConfigError):
        run_scenario(oracle_box, [0.3, 0.7])


def test_points_outside_space(norrebro):
    with pytest.raises(ValueError):
        evaluate(norrebro, [[0.0, 0.0, 0.0]])


def test_oracle_box_examples():
    assert oracle_box_simulator([0.35, 0.75]) == 1
    assert oracle_box_simulator([0.19, 0.75]) == 0
    assert oracle_box_simulator([0.2, 0.9]) == 1  # closed boundary


def test_oracle_box_vulnerable_fraction(oracle_box):
    rng = np.random.default_rng(0)
    data = simulate(oracle_box, rng.random((200_000, 2)))
    assert data.labels.mean() == pytest.approx(0.09, abs=0.003)


def test_oracle_ring_examples():
    assert oracle_ring_simulator([0.5, 0.5]) == 0
    assert oracle_ring_simulator([0.85, 0.5]) == 1
    assert oracle_ring_simulator([0.99, 0.99]) == 0
