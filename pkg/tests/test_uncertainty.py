import json
import logging

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from h2xpinn import physics, uncertainty
from h2xpinn.data import FEATURES, FeatureScaling, SplitSpec, normalize, stratified_split
from h2xpinn.network import Mlp
from h2xpinn.synthetic import oracle_dataset
from h2xpinn.training import TrainConfig, TrainingDiverged, TrainReport
from h2xpinn.uncertainty import (EnsembleModel, coverage, load_ensemble, predict_with_uncertainty,
                                 save_ensemble, sensitivity, train_ensemble)

SIZES = (8, 16, 16, 1)
BOX = FeatureScaling(np.array([0, 0, 0, 20, 0, 0, 0, 0.0]), np.array([100, 100, 5, 300, 3, 1, 10, 1.0]))
POINTS = np.array([[60.0, 30.0, 1.0, 178.0, 1.0, 0.8, 0.0, 0.0],
                   [40.0, 10.0, 1.0, 51.0, 0.5, 1.0, 0.0, 0.0]])


def constant_net(c, sizes=SIZES):
    net = Mlp(sizes)
    net.layers()[-1][1][...] = c
    return net


def constant_ensemble(values):
    return EnsembleModel([constant_net(v) for v in values], list(range(42, 42 + len(values))), BOX, 0.3)


@pytest.fixture(scope="module")
def data():
    ds = oracle_dataset(70, seed=5)
    tr, va, te = stratified_split(ds, SplitSpec(seed=42))
    return normalize(tr), va, te


# ------------------------------------------------------------------ statistics

def test_population_statistics_example():
    pred = predict_with_uncertainty(constant_ensemble([1.0, 2.0, 3.0]), POINTS[:1])
    assert pred.mean[0] == pytest.approx(2.0)
    assert pred.std[0] == pytest.approx(np.sqrt(2.0 / 3.0), rel=1e-12)
    assert pred.std[0] == pytest.approx(0.8165, abs=1e-4)
    lo, hi = pred.ci95
    assert (lo[0], hi[0]) == pytest.approx((0.40, 3.60), abs=5e-3)


def test_identical_members_have_zero_spread():
    pred = predict_with_uncertainty(constant_ensemble([1.5] * 4), POINTS)
    assert np.all(pred.std == 0.0)
    np.testing.assert_array_equal(pred.ci95[0], pred.ci95[1])


def test_single_member_warns(caplog):
    e = EnsembleModel([constant_net(1.0)], [42], BOX, 0.3)
    with caplog.at_level(logging.WARNING):
        pred = predict_with_uncertainty(e, POINTS)
    assert np.all(pred.std == 0.0)
    assert "single-member" in caplog.text


def test_member_topology_and_seed_order_enforced():
    with pytest.raises(ValueError):
        EnsembleModel([constant_net(1.0), constant_net(1.0, (8, 4, 1))], [42, 43], BOX, 0.3)
    with pytest.raises(ValueError):
        EnsembleModel([constant_net(1.0), constant_net(2.0)], [43, 42], BOX, 0.3)


@given(st.lists(st.integers(0, 10_000), min_size=2, max_size=6, unique=True), st.randoms())
def test_mean_and_spread_properties(seeds, rnd):
    members = [Mlp.init(s, SIZES) for s in seeds]
    e = EnsembleModel(members, list(range(len(members))), BOX, 0.3)
    X = BOX.inverse(np.random.default_rng(0).uniform(0, 1, (20, 8)))
    pred = predict_with_uncertainty(e, X)
    Xs = BOX.transform(X)
    manual = np.mean([m.batch_forward(Xs) for m in members], axis=0)
    np.testing.assert_allclose(pred.mean, manual, rtol=0, atol=1e-12)
    shuffled = members[:]
    rnd.shuffle(shuffled)
    pred2 = predict_with_uncertainty(EnsembleModel(shuffled, list(range(len(members))), BOX, 0.3), X)
    np.testing.assert_allclose(pred2.std, pred.std, rtol=1e-12, atol=1e-15)
    assert np.all(pred.std >= 0) and np.all(pred.ci95[0] <= pred.ci95[1])


# ------------------------------------------------------------------ training

def test_ensemble_seeds_distinct_members_and_determinism(data):
    tr, va, _ = data
    cfg = TrainConfig(max_epochs=3, layer_sizes=SIZES)
    a = train_ensemble(tr, va, cfg, n_members=3)
    b = train_ensemble(tr, va, cfg, n_members=3)
    assert a.member_seeds == [42, 43, 44]
    assert not np.array_equal(a.members[0].params, a.members[1].params)
    for ma, mb in zip(a.members, b.members):
        assert ma.params.tobytes() == mb.params.tobytes()


def test_hundred_member_seed_range(data):
    tr, va, _ = data
    e = train_ensemble(tr, va, TrainConfig(max_epochs=1, layer_sizes=(8, 2, 1)), n_members=100)
    assert e.member_seeds == list(range(42, 142))


def test_ensemble_needs_two_members(data):
    tr, va, _ = data
    with pytest.raises(ValueError):
        train_ensemble(tr, va, TrainConfig(max_epochs=1, layer_sizes=SIZES), n_members=1)


def test_diverged_member_excluded(data, monkeypatch, caplog):
    tr, va, _ = data
    real_train = uncertainty.train

    def flaky(train_ds, val_ds, cfg, seed, params):
        if seed == 43:
            raise TrainingDiverged("boom", TrainReport(seed=seed, config={}))
        return real_train(train_ds, val_ds, cfg, seed=seed, params=params)

    monkeypatch.setattr(uncertainty, "train", flaky)
    with caplog.at_level(logging.WARNING):
        e = train_ensemble(tr, va, TrainConfig(max_epochs=1, layer_sizes=SIZES), n_members=3)
    assert e.member_seeds == [42, 44] and e.excluded == [43]
    assert "ensemble size 2" in caplog.text


def test_save_load_round_trip(tmp_path, data):
    tr, va, _ = data
    e = train_ensemble(tr, va, TrainConfig(max_epochs=2, layer_sizes=SIZES), n_members=2)
    save_ensemble(tmp_path / "ens", e, {"note": "x"})
    back = load_ensemble(tmp_path / "ens")
    assert back.member_seeds == e.member_seeds and back.beta == e.beta
    np.testing.assert_array_equal(back.member_predictions(POINTS), e.member_predictions(POINTS))
    manifest = json.loads((tmp_path / "ens" / "manifest.json").read_text())
    assert manifest["member_seeds"] == [42, 43] and manifest["excluded_seeds"] == []


# ------------------------------------------------------------------ calibration

def test_coverage_trivial_cases():
    mean, std = np.array([1.0, 2.0, 3.0]), np.array([0.1, 0.2, 0.3])
    assert set(coverage(mean, std, mean).values()) == {1.0}
    assert set(coverage(mean, std, mean + 10 * std).values()) == {0.0}
    with pytest.raises(ValueError):
        coverage([], [], [])


def test_monte_carlo_noise_matched_to_spread():
    """Observations drawn at the ensemble's own spread land in the 95 % band ~95 % of the time."""
    rng = np.random.default_rng(0)
    mean = rng.uniform(0, 5, 20_000)
    std = rng.uniform(0.01, 0.5, 20_000)
    labels = mean + std * rng.standard_normal(20_000)
    cov = coverage(mean, std, labels)
    for level, frac in cov.items():
        assert abs(frac - level) < 0.015


@given(st.lists(st.tuples(st.floats(-5, 5), st.floats(0, 2), st.floats(-10, 10)), min_size=1, max_size=40))
def test_coverage_monotone_in_level(rows):
    mean, std, labels = map(np.array, zip(*rows))
    cov = coverage(mean, std, labels)
    levels = sorted(cov)
    assert all(cov[a] <= cov[b] for a, b in zip(levels, levels[1:]))


# ------------------------------------------------------------------ sensitivity

def test_linear_probe_sensitivity():
    out = sensitivity(lambda F: 3.0 * F[:, 4], POINTS)
    assert out["current_density_a_cm2"]["mean"] == pytest.approx(3.0, rel=1e-12)
    assert out["temperature_c"]["mean"] == 0.0


def test_zero_network_has_zero_sensitivity():
    out = sensitivity(constant_ensemble([0.0, 0.0]), POINTS)
    assert all(v["mean"] == 0.0 for v in out.values() if v["n"] > 0)
    assert sum(v["n"] > 0 for v in out.values()) == 5


def test_ignored_feature_has_exactly_zero_sensitivity():
    members = [Mlp.init(s, SIZES) for s in (1, 2)]
    col = FEATURES.index("pressure_anode_bar")
    for m in members:
        m.layers()[0][0][col, :] = 0.0
    out = sensitivity(EnsembleModel(members, [1, 2], BOX, 0.3), POINTS)
    assert out["pressure_anode_bar"]["mean"] == 0.0
    assert out["current_density_a_cm2"]["mean"] > 0.0


def test_out_of_domain_perturbations_skipped_and_counted():
    pts = POINTS.copy()
    pts[0, 0] = 149.5  # +1 °C leaves the temperature domain
    out = sensitivity(lambda F: F[:, 0], pts)
    assert out["temperature_c"]["n"] == 1 and out["temperature_c"]["skipped"] == 1
    assert out["compression_um"]["skipped"] == 2  # compression 0 cannot go negative


def test_current_density_dominates_temperature(data):
    tr, va, te = data
    F = te.features()
    oracle = sensitivity(lambda X: physics.crossover_fraction(X), F)
    assert oracle["current_density_a_cm2"]["mean"] > oracle["temperature_c"]["mean"]
    e = train_ensemble(tr, va, TrainConfig(max_epochs=150, layer_sizes=(8, 32, 32, 1)), n_members=3)
    learned = sensitivity(e, F)
    assert learned["current_density_a_cm2"]["mean"] > learned["temperature_c"]["mean"]
