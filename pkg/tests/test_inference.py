import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from h2xpinn import physics
from h2xpinn.data import FeatureScaling, OperatingPoint
from h2xpinn.inference import FusionConfig, bench, extrapolation_study, fuse, load_predictor, predict
from h2xpinn.network import Mlp, save_checkpoint
from h2xpinn.synthetic import extrapolation_design
from h2xpinn.training import TrainConfig
from h2xpinn.uncertainty import EnsembleModel, save_ensemble

BOX = FeatureScaling(np.array([20, 1, 1, 50, 0.1, 0, 0, 0.0]), np.array([90, 80, 1, 180, 2, 1, 0, 0.0]))
PTS = [OperatingPoint(60.0, 30.0, 1.0, 178.0, 1.0, "Nafion 117 178um"),
       OperatingPoint(40.0, 10.0, 1.0, 51.0, 0.5, "Nafion 212 51um")]


@pytest.fixture
def ckpt(tmp_path):
    return save_checkpoint(tmp_path / "m.ckpt.json", Mlp.init(3), BOX, {"seed": 3, "beta": 0.3})


@pytest.fixture
def ens_dir(tmp_path):
    e = EnsembleModel([Mlp.init(s) for s in (42, 43, 44)], [42, 43, 44], BOX, 0.3)
    return save_ensemble(tmp_path / "ens", e)


# ------------------------------------------------------------------ fusion

def test_fuse_examples():
    assert fuse(2.0, 1.0, 0.5) == 1.5
    assert fuse(2.0, 1.0, 1.0) == 2.0
    assert fuse(2.0, 1.0, 0.0) == 1.0
    with pytest.raises(ValueError):
        fuse(1.0, 1.0, 1.2)
    with pytest.raises(ValueError):
        FusionConfig(fusion_weight=-0.1)


finite = st.floats(-1e12, 1e12)


@given(st.lists(st.tuples(finite, finite), min_size=1, max_size=20))
def test_fusion_endpoints_are_exact(pairs):
    a, b = map(np.array, zip(*pairs))
    np.testing.assert_array_equal(fuse(a, b, 1.0), a)
    np.testing.assert_array_equal(fuse(a, b, 0.0), b)


@given(finite, finite, st.floats(0.0, 1.0))
def test_fusion_is_convex(a, b, alpha):
    y = float(fuse(a, b, alpha))
    assert min(a, b) - 1e-6 * max(1, abs(a), abs(b)) <= y <= max(a, b) + 1e-6 * max(1, abs(a), abs(b))


# ------------------------------------------------------------------ predict

def test_predict_single_checkpoint(ckpt):
    rows = predict(load_predictor(ckpt), PTS)
    assert len(rows) == 2
    assert {"temperature_c", "pinn_pct", "physics_pct", "fusion_pct", "prediction_pct"} <= set(rows[0])
    assert "std_pct" not in rows[0]
    assert rows[0]["temperature_c"] == 60.0


def test_alpha_zero_returns_oracle(ckpt):
    rows = predict(load_predictor(ckpt), PTS, FusionConfig(0.0, True, False))
    for r, pt in zip(rows, PTS):
        assert r["prediction_pct"] == float(physics.crossover_concentration(pt).X_H2_ca)


def test_zero_current_needs_fusion_off(ckpt):
    pts = [OperatingPoint(60.0, 30.0, 1.0, 178.0, 0.0, "Nafion 117 178um")]
    pred = load_predictor(ckpt)
    with pytest.raises(physics.PhysicsDomainError):
        predict(pred, pts)
    rows = predict(pred, pts, FusionConfig(enabled=False, clamp_output=False))
    assert rows[0]["prediction_pct"] == rows[0]["pinn_pct"]
    assert "physics_pct" not in rows[0]


def test_ensemble_output_has_uncertainty_columns(ens_dir):
    rows = predict(load_predictor(ens_dir), PTS, FusionConfig(enabled=False, clamp_output=False))
    r = rows[0]
    assert {"std_pct", "ci95_low_pct", "ci95_high_pct"} <= set(r)
    assert r["ci95_low_pct"] == pytest.approx(r["prediction_pct"] - 1.96 * r["std_pct"])
    assert r["ci95_high_pct"] == pytest.approx(r["prediction_pct"] + 1.96 * r["std_pct"])


def test_clamp_is_presentation_only(tmp_path):
    net = Mlp((8, 4, 1))
    net.layers()[-1][1][...] = -0.5
    path = save_checkpoint(tmp_path / "neg.json", net, BOX)
    rows = predict(load_predictor(path), PTS, FusionConfig(enabled=False))
    assert rows[0]["pinn_pct"] == -0.5 and rows[0]["prediction_pct"] == 0.0


def test_predict_is_deterministic(ens_dir):
    a = predict(load_predictor(ens_dir), PTS)
    b = predict(load_predictor(ens_dir), PTS)
    assert a == b


def test_schema_mismatch(tmp_path):
    path = save_checkpoint(tmp_path / "m7.json", Mlp.init(0, (7, 4, 1)),
                           FeatureScaling(np.zeros(7), np.ones(7)))
    with pytest.raises(ValueError, match="schema"):
        predict(load_predictor(path), PTS)


def test_checkpoint_without_stats_rejected(tmp_path):
    path = save_checkpoint(tmp_path / "bare.json", Mlp.init(0))
    with pytest.raises(ValueError):
        load_predictor(path)


# ------------------------------------------------------------------ bench

def test_bench_report_shape(ckpt):
    pred = load_predictor(ckpt)
    single = bench(pred, "single")
    assert single.n_timed == 900 == len(single.latencies_us)
    assert single.p50_us <= single.p95_us <= single.p99_us
    assert single.mean_us < 2000.0
    batch = bench(pred, "batch100")
    assert batch.batch_size == 100
    assert batch.p50_us <= batch.p95_us <= batch.p99_us
    assert batch.mean_us < 100 * single.mean_us
    with pytest.raises(ValueError):
        bench(pred, "stream")
    with pytest.raises(ValueError):
        bench(pred, n_total=10, n_warmup=10)


# ------------------------------------------------------------------ extrapolation

def test_extrapolation_table_shape_and_errors():
    train_ds, test_ds = extrapolation_design(temperatures=(60.0,), test_pressures=(40.0, 120.0))
    cfg = TrainConfig(max_epochs=3, layer_sizes=(8, 8, 1))
    rows, ctx = extrapolation_study(train_ds, test_ds, (40.0, 120.0), cfg)
    assert [(r["pressure"], r["method"]) for r in rows] == [
        (p, m) for p in (40.0, 120.0) for m in ("nn", "pinn", "pinn_fusion")]
    assert set(rows[0]) == {"pressure", "method", "n", "r2", "rmse", "mape"}
    assert ctx["train_max_pressure"] == 80.0
    with pytest.raises(ValueError, match="no test slice"):
        extrapolation_study(train_ds, test_ds, (300.0,), cfg)


@pytest.mark.slow
def test_interpolation_sanity(extrapolation_result):
    """Inside the training pressure range the three methods agree within 2 R² points.

    A single pure-NN run can stop early and trail by a couple of hundredths on
    one narrow slice, so R² is averaged over three training seeds (the shared
    seed-42 study plus seeds 43 and 44).
    """
    _, table, _ = extrapolation_result
    train_ds, test_ds = extrapolation_design(test_pressures=(40.0,))
    cfg = TrainConfig(collocation_points=1000)
    tables = [table]
    for seed in (43, 44):
        rows, _ = extrapolation_study(train_ds, test_ds, (40.0,), cfg, seed=seed)
        tables.append({(r["pressure"], r["method"]): r for r in rows})
    r2 = [np.mean([t[(40.0, m)]["r2"] for t in tables]) for m in ("nn", "pinn", "pinn_fusion")]
    assert max(r2) - min(r2) <= 0.02
