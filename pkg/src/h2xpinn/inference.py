"""Inference-time services: physics fusion, checkpoint prediction, extrapolation
study and latency benchmarking."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import _kernels, physics
from .data import FEATURES, Dataset, SplitSpec, encode_features, normalize, stratified_split
from .network import load_checkpoint
from .training import TrainConfig, metrics, train
from .uncertainty import MANIFEST, Z95, EnsembleModel, load_ensemble, predict_with_uncertainty

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FusionConfig:
    fusion_weight: float = 0.5
    enabled: bool = True
    clamp_output: bool = True

    def __post_init__(self):
        if not 0.0 <= self.fusion_weight <= 1.0:
            raise ValueError("fusion_weight must lie in [0, 1]")


def fuse(y_pinn, y_physics, alpha=0.5):
    """``alpha * y_pinn + (1 - alpha) * y_physics``; endpoints return an input unchanged."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    y_pinn = np.asarray(y_pinn, dtype=float)
    y_physics = np.asarray(y_physics, dtype=float)
    if alpha == 1.0:
        return y_pinn.copy()
    if alpha == 0.0:
        return y_physics.copy()
    return alpha * y_pinn + (1.0 - alpha) * y_physics


def load_predictor(path):
    """Load a single checkpoint file or an ensemble directory as an :class:`EnsembleModel`."""
    path = Path(path)
    if path.is_dir():
        if not (path / MANIFEST).exists():
            raise FileNotFoundError(f"{path} has no {MANIFEST}")
        return load_ensemble(path)
    model, scaling, meta = load_checkpoint(path)
    if scaling is None:
        raise ValueError(f"{path} carries no normalization stats")
    return EnsembleModel([model], [int(meta.get("seed", 0))], scaling, float(meta.get("beta", np.nan)))


def _as_features(points):
    if isinstance(points, Dataset):
        return points.features()
    if isinstance(points, np.ndarray):
        return np.atleast_2d(points).astype(float)
    return np.array([encode_features(p) for p in points])


def predict(predictor, points, fusion=FusionConfig(), params=physics.PhysicsParams()):
    """Predict H2-in-O2 (%) for operating points; returns a list of row dicts.

    Each row echoes the physical inputs, then ``pinn_pct`` (raw network or
    ensemble mean), optional ``physics_pct``/``fusion_pct``, the presented
    ``prediction_pct`` (clamped at 0 when configured) and, for ensembles,
    ``std_pct`` and the 95 % interval of the presented value.
    """
    F = _as_features(points)
    if predictor.members[0].sizes[0] != F.shape[1] or predictor.scaling.minimum.shape[0] != F.shape[1]:
        raise ValueError("checkpoint feature schema does not match the input points")
    if len(predictor) > 1:
        stats = predict_with_uncertainty(predictor, F)
        y, std = stats.mean, stats.std
    else:
        y = predictor.predict_mean(F)
        std = np.zeros_like(y)
    rows = {"pinn_pct": y}
    out = y
    if fusion.enabled:
        y_phys = physics.crossover_fraction(F, params)
        out = fuse(y, y_phys, fusion.fusion_weight)
        std = fusion.fusion_weight * std
        rows["physics_pct"] = y_phys
        rows["fusion_pct"] = out
    shown = np.maximum(out, 0.0) if fusion.clamp_output else out
    rows["prediction_pct"] = shown
    if len(predictor) > 1:
        lo, hi = out - Z95 * std, out + Z95 * std
        if fusion.clamp_output:
            lo, hi = np.maximum(lo, 0.0), np.maximum(hi, 0.0)
        rows.update({"std_pct": std, "ci95_low_pct": lo, "ci95_high_pct": hi})
    result = []
    for k in range(len(F)):
        row = {name: float(F[k, j]) for j, name in enumerate(FEATURES)}
        row.update({name: float(v[k]) for name, v in rows.items()})
        result.append(row)
    return result


def write_rows_csv(rows, path, columns=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = list(columns or (rows[0].keys() if rows else []))
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for k, v in r.items()})
    return path


# ----------------------------------------------------------- extrapolation

def extrapolation_study(train_ds, test_ds, test_pressures, cfg=TrainConfig(), params=physics.PhysicsParams(),
                        alpha=0.5, pinn_beta=None, calibrate=True, seed=None):
    """Pure NN vs PINN vs PINN+physics fusion at held-out cathode pressures.

    Trains a pure network (beta 0) and a PINN (``pinn_beta``, default the
    config's weight) on ``train_ds``; the fusion partner is the physics model
    with the cathode solubility least-squares calibrated on the training
    points. When the config requests collocation points, the PINN's physics
    term is evaluated up to the largest test pressure. Returns
    ``(rows, context)`` where rows carry ``pressure, method, n, r2, rmse, mape``.
    """
    seed = cfg.base_seed if seed is None else seed
    fit_ds, val_ds, _ = stratified_split(train_ds, SplitSpec(0.875, 0.125, 0.0, seed))
    fit_ds = normalize(fit_ds)
    partner = physics.calibrate_solubility(fit_ds.features(), fit_ds.labels(), params) if calibrate else params
    beta = cfg.physics_weight if pinn_beta is None else pinn_beta

    nn_cfg = TrainConfig.from_dict({**cfg.to_dict(), "physics_weight": 0.0, "collocation_points": 0})
    pinn_cfg = TrainConfig.from_dict({**cfg.to_dict(), "physics_weight": beta,
                                      "collocation_pressure_max": float(max(test_pressures))})
    nn, nn_report = train(fit_ds, val_ds, nn_cfg, seed=seed, params=partner)
    pinn, pinn_report = train(fit_ds, val_ds, pinn_cfg, seed=seed, params=partner)
    scaling = fit_ds.normalization_stats

    F_test = test_ds.features()
    y_test = test_ds.labels()
    rows = []
    for P in test_pressures:
        sel = np.isclose(F_test[:, 1], P)
        if sel.sum() < 2:
            raise ValueError(f"no test slice (need >= 2 points) at {P} bar")
        X = scaling.transform(F_test[sel])
        y = y_test[sel]
        y_nn = nn.batch_forward(X)
        y_pinn = pinn.batch_forward(X)
        y_fused = fuse(y_pinn, physics.crossover_fraction(F_test[sel], partner), alpha)
        for method, pred in (("nn", y_nn), ("pinn", y_pinn), ("pinn_fusion", y_fused)):
            r2, rmse, _, mape = metrics(pred, y)
            rows.append({"pressure": float(P), "method": method, "n": int(sel.sum()), "r2": r2,
                         "rmse": rmse, "mape": mape})
    context = {
        "train_max_pressure": float(train_ds.features()[:, 1].max()),
        "calibrated_solubility_cathode": partner.solubility_cathode,
        "pinn_beta": beta,
        "alpha": alpha,
        "nn_stop_epoch": nn_report.stop_epoch,
        "pinn_stop_epoch": pinn_report.stop_epoch,
        "pinn_collocation_points": pinn_report.collocation_points,
    }
    return rows, context


# ---------------------------------------------------------------- benchmark

@dataclass
class BenchReport:
    mode: str
    backend: str
    n_total: int
    n_warmup: int
    n_timed: int
    latencies_us: list
    mean_us: float
    std_us: float
    p50_us: float
    p95_us: float
    p99_us: float
    batch_size: int

    def summary(self):
        d = asdict(self)
        d.pop("latencies_us")
        return d


def random_inputs(scaling, n, rng):
    """Uniform physical inputs inside the checkpoint's normalization box."""
    lo, hi = scaling.minimum, scaling.maximum
    return lo + (hi - lo) * rng.random((n, len(lo)))


def bench(predictor, mode="single", n_total=1000, n_warmup=100, seed=0):
    """Time ``n_total`` inference calls and keep the last ``n_total - n_warmup``.

    ``single`` times one point per call, ``batch100`` one 100-point batch per
    call. Each call includes input scaling and the forward pass of every
    member; inputs are pre-generated so sampling is not timed.
    """
    if mode not in ("single", "batch100"):
        raise ValueError(f"unknown bench mode {mode!r}")
    if not 0 <= n_warmup < n_total:
        raise ValueError("need 0 <= n_warmup < n_total")
    batch = 1 if mode == "single" else 100
    rng = np.random.default_rng(seed)
    inputs = random_inputs(predictor.scaling, n_total * batch, rng).reshape(n_total, batch, -1)
    lat = np.empty(n_total)
    clock = time.perf_counter_ns
    for k in range(n_total):
        t0 = clock()
        predictor.predict_mean(inputs[k])
        lat[k] = (clock() - t0) / 1e3
    kept = lat[n_warmup:]
    p50, p95, p99 = np.percentile(kept, [50, 95, 99])
    return BenchReport(mode=mode, backend=_kernels.active().name, n_total=n_total, n_warmup=n_warmup,
                       n_timed=len(kept), latencies_us=kept.tolist(), mean_us=float(kept.mean()),
                       std_us=float(kept.std()), p50_us=float(p50), p95_us=float(p95),
                       p99_us=float(p99), batch_size=batch)
