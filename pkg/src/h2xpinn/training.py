"""Composite physics-informed loss, Adam training loop and cross-validation.

The network outputs a single scalar (H2 in O2, %), so ten of the eleven
physics relations involve quantities it never predicts. Those ten are
evaluated on the analytically computed transport state and contribute
(numerically) zero; the crossover-ratio relation is the one that couples the
network output to the physics chain. The physics loss therefore reduces to
``mean((pred - X_oracle)**2) / 11`` plus a constant at machine-precision level.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import _kernels, physics
from .data import SplitSpec, normalize, stratified_folds, stratified_split
from .network import Mlp

log = logging.getLogger(__name__)

N_CONSTRAINTS = len(physics.RESIDUAL_NAMES)


class TrainingDiverged(RuntimeError):
    def __init__(self, message, report):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class TrainConfig:
    physics_weight: float = 0.3
    learning_rate: float = 5.5e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 32
    max_epochs: int = 2000
    plateau_factor: float = 0.5
    plateau_patience: int = 50
    min_lr: float = 1e-6
    early_stop_patience: int = 150
    min_delta: float = 1e-6
    base_seed: int = 42
    layer_sizes: tuple = (8, 128, 128, 1)
    activation: str = "tanh"
    # Unlabelled points where only the physics term is evaluated (0 disables).
    collocation_points: int = 0
    collocation_pressure_max: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.physics_weight <= 1.0:
            raise ValueError("physics_weight must lie in [0, 1]")
        if not self.learning_rate > self.min_lr:
            raise ValueError("learning_rate must exceed min_lr")
        if self.plateau_patience < 1 or self.early_stop_patience < 1:
            raise ValueError("patience values must be >= 1")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be >= 1")
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise KeyError(f"unknown train option(s): {sorted(unknown)}")
        return cls(**data)

    def to_dict(self):
        d = asdict(self)
        d["layer_sizes"] = list(self.layer_sizes)
        return d


@dataclass(frozen=True)
class CvPlan:
    folds: int = 5
    repetitions: int = 20
    base_seed: int = 42

    def seed(self, rep, fold):
        return self.base_seed + rep * 5 + fold

    def seeds(self):
        return [self.seed(r, f) for r in range(self.repetitions) for f in range(self.folds)]


# ------------------------------------------------------------------ losses

def data_loss(pred, label):
    pred, label = np.asarray(pred, dtype=float), np.asarray(label, dtype=float)
    if pred.shape != label.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {label.shape}")
    if pred.size == 0:
        raise ValueError("data_loss needs at least one record")
    return float(np.mean(np.square(pred - label)))


def total_loss(l_data, l_physics, beta):
    if not 0.0 <= beta <= 1.0:
        raise ValueError("beta must lie in [0, 1]")
    return (1.0 - beta) * l_data + beta * l_physics


@dataclass
class PhysicsTargets:
    """Per-record oracle crossover fraction and the (constant) sum of residuals 1-10."""

    x_oracle: np.ndarray
    fixed_residual: np.ndarray
    valid: np.ndarray

    @classmethod
    def from_features(cls, features, params=physics.PhysicsParams()):
        F = np.atleast_2d(np.asarray(features, dtype=float))
        valid = F[:, 4] > 0
        if not valid.all():
            log.warning("%d record(s) with zero current excluded from the crossover residual",
                        int((~valid).sum()))
        state = physics.transport_state(F[:, 0], F[:, 1], F[:, 2], F[:, 3], F[:, 4], F[:, 6],
                                        params, allow_zero_current=True)
        pt = _ColumnPoint(F)
        res = physics.physics_residuals(pt, state, params)
        fixed = np.nan_to_num(res[:-1]).sum(axis=0)
        return cls(np.where(valid, state.X_H2_ca, 0.0), fixed, valid)

    def take(self, idx):
        return PhysicsTargets(self.x_oracle[idx], self.fixed_residual[idx], self.valid[idx])


class _ColumnPoint:
    """Adapter exposing feature-matrix columns under OperatingPoint attribute names."""

    def __init__(self, F):
        self.temperature_stack = F[:, 0]
        self.pressure_cathode = F[:, 1]
        self.pressure_anode = F[:, 2]
        self.current_density = F[:, 4]


def _physics_value_grad(pred, targets):
    diff = np.where(targets.valid, pred - targets.x_oracle, 0.0)
    n = pred.shape[0]
    value = float(np.mean(targets.fixed_residual + diff * diff)) / N_CONSTRAINTS
    grad = 2.0 * diff / (N_CONSTRAINTS * n)
    return value, grad


def physics_loss(features, pred, params=physics.PhysicsParams(), return_grad=False, targets=None):
    """Mean over records of the mean of the eleven squared physics residuals.

    ``features`` are physical (unscaled) encoded inputs, shape ``(n, 8)``.
    The crossover-ratio residual uses ``pred`` in place of the oracle's own
    crossover fraction. With ``return_grad`` also returns ``dloss/dpred``.
    """
    pred = np.asarray(pred, dtype=float)
    if targets is None:
        targets = PhysicsTargets.from_features(features, params)
    value, grad = _physics_value_grad(pred, targets)
    return (value, grad) if return_grad else value


def error_metrics(pred, label):
    """``(rmse, mae, mape_percent)``; defined for any non-empty input, MAPE skips zero labels."""
    pred, label = np.asarray(pred, dtype=float), np.asarray(label, dtype=float)
    if pred.shape != label.shape or pred.size == 0:
        raise ValueError("error metrics need equal-length, non-empty inputs")
    resid = pred - label
    rmse = math.sqrt(float(np.mean(resid * resid)))
    mae = float(np.mean(np.abs(resid)))
    nz = label != 0
    if not nz.all():
        log.warning("MAPE skips %d zero label(s)", int((~nz).sum()))
    mape = float(np.mean(np.abs(resid[nz] / label[nz]))) * 100.0 if nz.any() else float("nan")
    return rmse, mae, mape


def metrics(pred, label):
    """``(r2, rmse, mae, mape_percent)``; R² needs n >= 2 and non-constant labels."""
    pred, label = np.asarray(pred, dtype=float), np.asarray(label, dtype=float)
    if pred.size < 2:
        raise ValueError("metrics need at least two points")
    ss_tot = float(np.sum(np.square(label - label.mean())))
    if ss_tot == 0:
        raise ValueError("R² undefined for zero-variance labels")
    rmse, mae, mape = error_metrics(pred, label)
    r2 = 1.0 - float(np.sum(np.square(pred - label))) / ss_tot
    return r2, rmse, mae, mape


# ------------------------------------------------------------------ optimizer

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls(np.zeros_like(params), np.zeros_like(params), 0)


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected Adam update of ``params`` in place; returns ``params``."""
    state.t += 1
    _kernels.active().adam_update(params, np.ascontiguousarray(grads, dtype=np.float64),
                                  state.m, state.v, lr, beta1, beta2, eps, state.t)
    return params


@dataclass
class PlateauScheduler:
    lr: float
    factor: float = 0.5
    patience: int = 50
    min_lr: float = 1e-6
    best: float = math.inf
    bad_epochs: int = 0

    def step(self, val_loss):
        if val_loss < self.best:
            self.best = val_loss
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.lr = max(self.lr * self.factor, self.min_lr)
                self.bad_epochs = 0
        return self.lr


@dataclass
class EarlyStopping:
    patience: int = 150
    min_delta: float = 1e-6
    best: float | None = None
    wait: int = 0

    def step(self, val_loss):
        """Record one epoch; returns True when training should stop."""
        if self.best is None or val_loss < self.best - self.min_delta:
            self.best = val_loss
            self.wait = 0
        else:
            self.wait += 1
        return self.wait >= self.patience


# ------------------------------------------------------------------ training

@dataclass
class TrainReport:
    seed: int
    config: dict
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    stop_epoch: int = 0
    best_epoch: int = 0
    best_val_loss: float = math.inf
    train_physics_loss: float = math.nan
    test_metrics: dict | None = None
    collocation_points: int = 0
    backend: str = ""

    def to_dict(self):
        return asdict(self)

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=1, sort_keys=True, allow_nan=True)
        if path is not None:
            Path(path).parent.mkdir(parents=True, exist_ok=True)
            Path(path).write_text(text + "\n")
        return text


def _collocation(train_feats, cfg, rng):
    n = cfg.collocation_points
    rows = train_feats[rng.integers(0, len(train_feats), size=n)].copy()
    lo, hi = train_feats.min(axis=0), train_feats.max(axis=0)
    p_hi = hi[1] if cfg.collocation_pressure_max is None else max(cfg.collocation_pressure_max, hi[1])
    rows[:, 1] = rng.uniform(lo[1], p_hi, size=n)
    i_lo = max(lo[4], 1e-3)
    rows[:, 4] = rng.uniform(i_lo, max(hi[4], i_lo), size=n)
    return rows


def train(train_ds, val_ds, cfg=TrainConfig(), seed=None, params=physics.PhysicsParams(),
          test_ds=None, model=None, on_epoch=None):
    """Fit a network; returns ``(model, report)``.

    Normalization stats are fitted on ``train_ds`` unless it already carries
    them. Validation loss (for scheduling and early stopping) is the data MSE
    only, so runs at different physics weights stop on comparable criteria.
    The returned model holds the parameters of the best validation epoch.
    ``on_epoch(epoch, net, report)`` is called after every epoch if given.
    """
    seed = cfg.base_seed if seed is None else int(seed)
    if train_ds.normalization_stats is None:
        train_ds = normalize(train_ds)
    scaling = train_ds.normalization_stats
    rng = np.random.default_rng(seed)
    net = Mlp.init(seed, cfg.layer_sizes, cfg.activation) if model is None else model.copy()

    F_train = train_ds.features()
    X_train = scaling.transform(F_train)
    y_train = train_ds.labels()
    targets = PhysicsTargets.from_features(F_train, params)
    X_val = scaling.transform(val_ds.features())
    y_val = val_ds.labels()
    beta = cfg.physics_weight

    n_batches = max(1, math.ceil(len(y_train) / cfg.batch_size))
    if cfg.collocation_points > 0 and beta > 0:
        F_col = _collocation(F_train, cfg, rng)
        X_col = scaling.transform(F_col)
        col_targets = PhysicsTargets.from_features(F_col, params)
        col_chunk = math.ceil(cfg.collocation_points / n_batches)
    else:
        X_col = None

    report = TrainReport(seed=seed, config=cfg.to_dict(), backend=_kernels.active().name,
                         collocation_points=0 if X_col is None else len(X_col))
    adam = AdamState.zeros_like(net.params)
    sched = PlateauScheduler(cfg.learning_rate, cfg.plateau_factor, cfg.plateau_patience, cfg.min_lr)
    stopper = EarlyStopping(cfg.early_stop_patience, cfg.min_delta)
    best_params = net.params.copy()

    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(y_train))
        col_order = rng.permutation(len(X_col)) if X_col is not None else None
        epoch_loss = 0.0
        for b in range(n_batches):
            idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            xb, yb = X_train[idx], y_train[idx]
            tb = targets.take(idx)
            nb = len(idx)
            if X_col is not None:
                cidx = col_order[b * col_chunk:(b + 1) * col_chunk]
                xb = np.concatenate([xb, X_col[cidx]])
                tb = PhysicsTargets(
                    np.concatenate([tb.x_oracle, col_targets.x_oracle[cidx]]),
                    np.concatenate([tb.fixed_residual, col_targets.fixed_residual[cidx]]),
                    np.concatenate([tb.valid, col_targets.valid[cidx]]))

            def loss_grad(pred, yb=yb, tb=tb, nb=nb):
                diff = pred[:nb] - yb
                l_data = float(np.mean(diff * diff))
                g = np.zeros_like(pred)
                g[:nb] = (1.0 - beta) * 2.0 * diff / nb
                if beta > 0:
                    l_phys, g_phys = _physics_value_grad(pred, tb)
                    g += beta * g_phys
                else:
                    l_phys = 0.0
                return total_loss(l_data, l_phys, beta), g

            loss, grads = net.value_and_gradient(xb, loss_grad)
            if not np.isfinite(loss) or not np.all(np.isfinite(grads)):
                report.stop_epoch = epoch
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}", report)
            adam_step(net.params, grads, adam, sched.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
            epoch_loss += loss * nb
        val = data_loss(net.batch_forward(X_val), y_val) if len(y_val) else epoch_loss / len(y_train)
        if not np.isfinite(val):
            report.stop_epoch = epoch
            raise TrainingDiverged(f"non-finite validation loss at epoch {epoch}", report)
        report.train_loss.append(epoch_loss / len(y_train))
        report.val_loss.append(val)
        report.lr.append(sched.lr)
        if val < report.best_val_loss:
            report.best_val_loss = val
            report.best_epoch = epoch
            best_params[...] = net.params
        sched.step(val)
        report.stop_epoch = epoch
        if on_epoch is not None:
            on_epoch(epoch, net, report)
        if stopper.step(val):
            break

    net.params[...] = best_params
    report.train_physics_loss = physics_loss(F_train, net.batch_forward(X_train), params, targets=targets)
    if test_ds is not None and len(test_ds) >= 2:
        pred = net.batch_forward(scaling.transform(test_ds.features()))
        report.test_metrics = dict(zip(("r2", "rmse", "mae", "mape"), metrics(pred, test_ds.labels())))
    return net, report


# ------------------------------------------------------------ cross-validation

CV_COLUMNS = ("rep", "fold", "seed", "beta", "r2", "rmse", "mae", "mape", "stop_epoch")


def _cv_run(args):
    ds, train_idx, test_idx, cfg, seed, params, rep, fold = args
    inner = ds.subset(train_idx)
    fit_part, val_part, _ = stratified_split(inner, SplitSpec(0.875, 0.125, 0.0, seed))
    fit_part = normalize(fit_part)
    _, report = train(fit_part, val_part, cfg, seed=seed, params=params, test_ds=ds.subset(test_idx))
    m = report.test_metrics
    return {"rep": rep, "fold": fold, "seed": seed, "beta": cfg.physics_weight, "r2": m["r2"],
            "rmse": m["rmse"], "mae": m["mae"], "mape": m["mape"], "stop_epoch": report.stop_epoch}


def cross_validate(ds, cfg=TrainConfig(), plan=CvPlan(), betas=None, params=physics.PhysicsParams(),
                   jobs=1):
    """Repeated stratified k-fold CV; one row per (beta, rep, fold) run.

    Fold membership for repetition ``r`` is drawn with seed ``plan.seed(r, 0)``;
    each run trains with ``plan.seed(r, f)`` and carves its validation set
    from the training folds.
    """
    betas = [cfg.physics_weight] if betas is None else list(betas)
    tasks = []
    for beta in betas:
        run_cfg = TrainConfig.from_dict({**cfg.to_dict(), "physics_weight": beta})
        for rep in range(plan.repetitions):
            folds = stratified_folds(ds, plan.folds, plan.seed(rep, 0))
            for fold in range(plan.folds):
                train_idx = np.flatnonzero(folds != fold).tolist()
                test_idx = np.flatnonzero(folds == fold).tolist()
                tasks.append((ds, train_idx, test_idx, run_cfg, plan.seed(rep, fold), params, rep, fold))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_cv_run, tasks))
    else:
        rows = [_cv_run(t) for t in tasks]
    return rows


def summarize_cv(rows):
    """Mean, population std and run count of each metric, keyed by beta."""
    out = {}
    for beta in sorted({r["beta"] for r in rows}):
        sel = [r for r in rows if r["beta"] == beta]
        out[str(beta)] = {
            k: {"mean": float(np.mean([r[k] for r in sel])), "std": float(np.std([r[k] for r in sel])),
                "n": len(sel)}
            for k in ("r2", "rmse", "mae", "mape")
        }
    return out


def write_cv_csv(rows, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CV_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(r[k]) if isinstance(r[k], float) else r[k]) for k in CV_COLUMNS})
    return path


__all__ = [
    "TrainConfig", "CvPlan", "TrainReport", "TrainingDiverged", "AdamState",
    "PlateauScheduler", "EarlyStopping", "data_loss", "physics_loss", "total_loss", "adam_step",
    "train", "cross_validate", "summarize_cv", "metrics", "error_metrics", "write_cv_csv",
]
