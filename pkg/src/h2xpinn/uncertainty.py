"""Deep ensembles: training, predictive statistics, calibration, sensitivity."""
from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import norm

from . import physics
from .data import FEATURES, FeatureScaling, normalize
from .network import checkpoint_dict, checkpoint_from_dict
from .training import TrainConfig, TrainingDiverged, train

log = logging.getLogger(__name__)

Z95 = 1.96
MANIFEST = "manifest.json"

# Central-difference half-steps in physical units (°C, bar, A/cm², µm)
DEFAULT_PERTURBATIONS = {
    "temperature_c": 1.0,
    "pressure_cathode_bar": 1.0,
    "pressure_anode_bar": 1.0,
    "current_density_a_cm2": 0.1,
    "thickness_um": 1.0,
    "compression_um": 1.0,
}


@dataclass
class EnsembleModel:
    members: list
    member_seeds: list
    scaling: FeatureScaling
    beta: float
    excluded: list = field(default_factory=list)

    def __post_init__(self):
        sizes = {m.sizes for m in self.members}
        if len(sizes) > 1:
            raise ValueError("ensemble members must share one topology")
        if any(b <= a for a, b in zip(self.member_seeds, self.member_seeds[1:])):
            raise ValueError("member seeds must be strictly increasing")

    def __len__(self):
        return len(self.members)

    def member_predictions(self, features):
        """``(n_members, n_points)`` outputs for physical features."""
        X = self.scaling.transform(np.atleast_2d(features))
        return np.array([m.batch_forward(X) for m in self.members])

    def predict_mean(self, features):
        return self.member_predictions(features).mean(axis=0)


@dataclass
class PredictionWithUncertainty:
    mean: np.ndarray
    std: np.ndarray
    ci95: tuple
    member_values: np.ndarray


def _fit_member(args):
    train_ds, val_ds, cfg, seed, params = args
    try:
        model, report = train(train_ds, val_ds, cfg, seed=seed, params=params)
        return seed, model, report
    except TrainingDiverged as exc:
        return seed, None, exc.report


def train_ensemble(train_ds, val_ds, cfg=TrainConfig(), n_members=100, params=physics.PhysicsParams(),
                   jobs=1):
    """Train ``n_members`` networks with seeds ``cfg.base_seed + index``.

    Diverged members are dropped with a warning and listed in ``excluded``.
    """
    if n_members < 2:
        raise ValueError("an ensemble needs at least two members")
    if train_ds.normalization_stats is None:
        train_ds = normalize(train_ds)
    tasks = [(train_ds, val_ds, cfg, cfg.base_seed + k, params) for k in range(n_members)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_fit_member, tasks))
    else:
        results = [_fit_member(t) for t in tasks]
    members, seeds, excluded = [], [], []
    for seed, model, _ in results:
        if model is None:
            excluded.append(seed)
            continue
        members.append(model)
        seeds.append(seed)
    if excluded:
        log.warning("excluded %d diverged member(s): %s; ensemble size %d", len(excluded), excluded,
                    len(members))
    return EnsembleModel(members, seeds, train_ds.normalization_stats, cfg.physics_weight, excluded)


def predict_with_uncertainty(ensemble, features):
    """Population mean/std over members and the ``mean ± 1.96 std`` interval."""
    values = ensemble.member_predictions(features)
    if values.shape[0] == 1:
        log.warning("single-member ensemble: std is identically zero")
    mu = values.mean(axis=0)
    sigma = np.sqrt(np.mean(np.square(values - mu), axis=0))
    return PredictionWithUncertainty(mu, sigma, (mu - Z95 * sigma, mu + Z95 * sigma), values)


def coverage(mean, std, labels, levels=(0.5, 0.8, 0.9, 0.95)):
    """Fraction of labels inside ``mean ± z(level) * std`` for each nominal level."""
    labels = np.asarray(labels, dtype=float)
    if labels.size == 0:
        raise ValueError("coverage needs a non-empty test set")
    dev = np.abs(labels - np.asarray(mean, dtype=float))
    return {lvl: float(np.mean(dev <= norm.ppf(0.5 + lvl / 2.0) * np.asarray(std, dtype=float)))
            for lvl in levels}


def calibration(ensemble, test_ds, levels=(0.5, 0.8, 0.9, 0.95)):
    pred = predict_with_uncertainty(ensemble, test_ds.features())
    return coverage(pred.mean, pred.std, test_ds.labels(), levels)


def _in_domain(F):
    return ((F[:, 0] >= 0) & (F[:, 0] <= 150) & (F[:, 1] >= 0) & (F[:, 2] >= 0)
            & (F[:, 6] >= 0) & (F[:, 3] > F[:, 6]) & (F[:, 4] >= 0))


def sensitivity(predictor, base_points, perturbations=None):
    """Central-difference sensitivities ``|f(p+d) - f(p-d)| / 2d`` per feature.

    ``predictor`` is an :class:`EnsembleModel` (mean prediction is used) or any
    callable mapping physical ``(n, 8)`` features to outputs. Returns
    ``{feature: {"mean", "std", "n", "skipped"}}`` in %-per-unit.
    """
    f = predictor.predict_mean if isinstance(predictor, EnsembleModel) else predictor
    perturbations = DEFAULT_PERTURBATIONS if perturbations is None else perturbations
    F = np.atleast_2d(np.asarray(base_points, dtype=float))
    out = {}
    for name, delta in perturbations.items():
        col = FEATURES.index(name)
        up, down = F.copy(), F.copy()
        up[:, col] += delta
        down[:, col] -= delta
        ok = _in_domain(up) & _in_domain(down)
        if ok.any():
            s = np.abs(np.asarray(f(up[ok])) - np.asarray(f(down[ok]))) / (2.0 * delta)
            out[name] = {"mean": float(s.mean()), "std": float(s.std()), "n": int(ok.sum()),
                         "skipped": int((~ok).sum())}
        else:
            out[name] = {"mean": float("nan"), "std": float("nan"), "n": 0, "skipped": len(F)}
    return out


# ------------------------------------------------------------------ persistence

def member_filename(seed):
    return f"member_{seed:04d}.ckpt.json"


def save_ensemble(directory, ensemble, metadata=None):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = []
    for seed, model in zip(ensemble.member_seeds, ensemble.members):
        name = member_filename(seed)
        blob = checkpoint_dict(model, ensemble.scaling, {"seed": seed, "beta": ensemble.beta})
        (directory / name).write_text(json.dumps(blob, indent=1, sort_keys=True) + "\n")
        names.append(name)
    manifest = {
        "format": "h2xpinn-ensemble",
        "version": 1,
        "member_seeds": list(ensemble.member_seeds),
        "members": names,
        "beta": ensemble.beta,
        "excluded_seeds": list(ensemble.excluded),
        "normalization": ensemble.scaling.to_dict(),
        "metadata": metadata or {},
    }
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return directory


def load_ensemble(directory):
    directory = Path(directory)
    manifest = json.loads((directory / MANIFEST).read_text())
    if manifest.get("format") != "h2xpinn-ensemble":
        raise ValueError(f"{directory} is not an ensemble directory")
    members = []
    for name in manifest["members"]:
        model, _, _ = checkpoint_from_dict(json.loads((directory / name).read_text()))
        members.append(model)
    return EnsembleModel(members, manifest["member_seeds"],
                         FeatureScaling.from_dict(manifest["normalization"]), manifest["beta"],
                         manifest.get("excluded_seeds", []))
