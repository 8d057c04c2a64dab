"""Dataset ingestion, feature encoding, scaling, splitting and augmentation."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from . import physics

log = logging.getLogger(__name__)

MEMBRANES = (
    "Nafion 117",
    "Nafion 212",
    "Nafion D2021",
    "Fuma-Tech E-730",
    "Nafion 117 178um",
    "Nafion 212 51um",
)
FEATURES = (
    "temperature_c",
    "pressure_cathode_bar",
    "pressure_anode_bar",
    "thickness_um",
    "current_density_a_cm2",
    "membrane_code",
    "compression_um",
    "pt_interlayer",
)
CSV_COLUMNS = (
    "study",
    "membrane",
    "temperature_c",
    "pressure_cathode_bar",
    "pressure_anode_bar",
    "thickness_um",
    "current_density_a_cm2",
    "compression_um",
    "pt_interlayer",
    "h2_concentration_pct",
    "provenance",
)
LABEL_BOUNDS = (0.0, 20.0)
ATMOSPHERIC_BAR = 1.0


class DataError(ValueError):
    """Invalid record or file; ``problems`` lists ``(line, message)`` pairs."""

    def __init__(self, message, problems=()):
        self.problems = list(problems)
        if self.problems:
            detail = "; ".join(f"line {ln}: {msg}" for ln, msg in self.problems)
            message = f"{message}: {detail}"
        super().__init__(message)


@dataclass(frozen=True)
class OperatingPoint:
    temperature_stack: float  # °C
    pressure_cathode: float  # bar
    pressure_anode: float  # bar
    thickness: float  # µm
    current_density: float  # A/cm²
    membrane_id: str
    compression: float = 0.0  # µm
    pt_interlayer: int = 0
    h2_concentration: float | None = None  # %

    def validate(self):
        errors = []
        if not 0.0 <= self.temperature_stack <= 150.0:
            errors.append(f"temperature {self.temperature_stack} outside [0, 150] °C")
        if self.pressure_cathode < 0 or self.pressure_anode < 0:
            errors.append("pressures must be non-negative")
        if self.compression < 0:
            errors.append("compression must be non-negative")
        if not self.thickness > self.compression:
            errors.append(f"thickness {self.thickness} must exceed compression {self.compression}")
        if self.current_density < 0:
            errors.append("current density must be non-negative")
        if self.pt_interlayer not in (0, 1):
            errors.append("pt_interlayer must be 0 or 1")
        if self.membrane_id not in MEMBRANES:
            errors.append(f"unknown membrane {self.membrane_id!r}")
        if self.h2_concentration is not None:
            lo, hi = LABEL_BOUNDS
            if not lo <= self.h2_concentration <= hi:
                errors.append(f"h2_concentration {self.h2_concentration} outside [{lo}, {hi}] %")
        if errors:
            raise DataError("; ".join(errors))
        return self


def membrane_code(membrane_id):
    try:
        idx = MEMBRANES.index(membrane_id)
    except ValueError:
        raise DataError(f"cannot encode unknown membrane {membrane_id!r}") from None
    return idx / (len(MEMBRANES) - 1)


def encode_features(pt):
    """Physical 8-vector in model input order (see :data:`FEATURES`)."""
    return np.array([
        pt.temperature_stack,
        pt.pressure_cathode,
        pt.pressure_anode,
        pt.thickness,
        pt.current_density,
        membrane_code(pt.membrane_id),
        pt.compression,
        float(pt.pt_interlayer),
    ])


@dataclass(frozen=True)
class FeatureScaling:
    """Per-feature min-max statistics; degenerate features map to 0."""

    minimum: np.ndarray
    maximum: np.ndarray

    @property
    def degenerate(self):
        return ~(self.maximum > self.minimum)

    @classmethod
    def fit(cls, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return cls(X.min(axis=0), X.max(axis=0))

    def _span(self):
        return np.where(self.degenerate, 1.0, self.maximum - self.minimum)

    def transform(self, X):
        Z = (np.asarray(X, dtype=float) - self.minimum) / self._span()
        return np.where(self.degenerate, 0.0, Z)

    def inverse(self, Z):
        return np.asarray(Z, dtype=float) * self._span() + self.minimum

    def to_dict(self):
        return {"features": list(FEATURES), "min": self.minimum.tolist(), "max": self.maximum.tolist()}

    @classmethod
    def from_dict(cls, d):
        if list(d.get("features", FEATURES)) != list(FEATURES):
            raise DataError("normalization stats were built for a different feature schema")
        return cls(np.asarray(d["min"], dtype=float), np.asarray(d["max"], dtype=float))


@dataclass(frozen=True)
class Dataset:
    records: tuple
    provenance: tuple = ()
    studies: tuple = ()
    normalization_stats: FeatureScaling | None = None

    def __post_init__(self):
        n = len(self.records)
        object.__setattr__(self, "records", tuple(self.records))
        object.__setattr__(self, "provenance", tuple(self.provenance) or ("experimental",) * n)
        object.__setattr__(self, "studies", tuple(self.studies) or ("",) * n)
        if not len(self.provenance) == len(self.studies) == n:
            raise DataError("provenance/study tags must align with records")

    def __len__(self):
        return len(self.records)

    def features(self):
        """Physical (n, 8) feature matrix."""
        if not self.records:
            return np.zeros((0, len(FEATURES)))
        return np.array([encode_features(r) for r in self.records])

    def scaled_features(self):
        if self.normalization_stats is None:
            raise DataError("dataset has no normalization stats; call normalize() first")
        return self.normalization_stats.transform(self.features())

    def labels(self):
        y = [r.h2_concentration for r in self.records]
        if any(v is None for v in y):
            raise DataError("dataset contains unlabelled records")
        return np.array(y, dtype=float)

    def membranes(self):
        return [r.membrane_id for r in self.records]

    def subset(self, indices):
        idx = list(indices)
        return Dataset(
            records=[self.records[k] for k in idx],
            provenance=[self.provenance[k] for k in idx],
            studies=[self.studies[k] for k in idx],
            normalization_stats=self.normalization_stats,
        )

    def concat(self, other):
        return Dataset(self.records + other.records, self.provenance + other.provenance,
                       self.studies + other.studies, self.normalization_stats)

    def with_stats(self, stats):
        return replace(self, normalization_stats=stats)


def _parse_row(row, line):
    def num(key, default=None):
        raw = (row.get(key) or "").strip()
        if raw == "":
            if default is None:
                raise DataError(f"missing value for {key}")
            return default
        try:
            return float(raw)
        except ValueError:
            raise DataError(f"{key}={raw!r} is not a number") from None

    label_raw = (row.get("h2_concentration_pct") or "").strip()
    pt = OperatingPoint(
        temperature_stack=num("temperature_c"),
        pressure_cathode=num("pressure_cathode_bar"),
        pressure_anode=num("pressure_anode_bar", ATMOSPHERIC_BAR),
        thickness=num("thickness_um"),
        current_density=num("current_density_a_cm2"),
        membrane_id=row["membrane"].strip(),
        compression=num("compression_um", 0.0),
        pt_interlayer=int(num("pt_interlayer", 0.0)),
        h2_concentration=float(label_raw) if label_raw else None,
    )
    pt.validate()
    prov = (row.get("provenance") or "experimental").strip() or "experimental"
    if prov not in ("experimental", "augmented"):
        raise DataError(f"provenance {prov!r} must be experimental or augmented")
    return pt, prov, (row.get("study") or "").strip()


def load_csv(path, require_labels=True):
    """Parse a dataset CSV, collecting every offending line before raising."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        header = tuple(h.strip() for h in (reader.fieldnames or ()))
        missing = [c for c in CSV_COLUMNS if c not in header]
        if missing:
            raise DataError(f"{path}: missing column(s) {missing}")
        records, prov, studies, problems = [], [], [], []
        for line, row in enumerate(reader, start=2):
            try:
                pt, tag, study = _parse_row(row, line)
                if require_labels and pt.h2_concentration is None:
                    raise DataError("missing label h2_concentration_pct")
            except DataError as exc:
                problems.append((line, str(exc)))
                continue
            records.append(pt)
            prov.append(tag)
            studies.append(study)
    if problems:
        raise DataError(f"{path}: {len(problems)} invalid row(s)", problems)
    return Dataset(records, prov, studies)


def write_csv(ds, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for pt, prov, study in zip(ds.records, ds.provenance, ds.studies):
            label = "" if pt.h2_concentration is None else repr(float(pt.h2_concentration))
            w.writerow([study, pt.membrane_id, repr(float(pt.temperature_stack)),
                        repr(float(pt.pressure_cathode)), repr(float(pt.pressure_anode)),
                        repr(float(pt.thickness)), repr(float(pt.current_density)),
                        repr(float(pt.compression)), int(pt.pt_interlayer), label, prov])
    return path


def normalize(ds, stats=None):
    """Attach min-max stats (fitted on ``ds`` unless given); records stay physical."""
    if stats is None:
        stats = FeatureScaling.fit(ds.features())
    return ds.with_stats(stats)


# ------------------------------------------------------------------ splitting

@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.70
    val_frac: float = 0.10
    test_frac: float = 0.20
    seed: int = 42

    def __post_init__(self):
        if not math.isclose(self.train_frac + self.val_frac + self.test_frac, 1.0, abs_tol=1e-9):
            raise ValueError("split fractions must sum to 1")


def _apportion(sizes, total, frac):
    """Largest-remainder allocation of ``total`` across classes proportional to ``frac * size``."""
    quotas = np.array([frac * n for n in sizes])
    alloc = np.floor(quotas).astype(int)
    order = np.argsort(-(quotas - alloc), kind="stable")
    for k in order[: max(total - alloc.sum(), 0)]:
        alloc[k] += 1
    return alloc


def stratified_split(ds, split=SplitSpec()):
    """Stratify by membrane; returns ``(train, val, test)`` Datasets."""
    if len(ds) == 0:
        raise DataError("cannot split an empty dataset")
    rng = np.random.default_rng(split.seed)
    classes = [m for m in MEMBRANES if m in set(ds.membranes())]
    members = {m: [k for k, r in enumerate(ds.records) if r.membrane_id == m] for m in classes}
    small = [m for m in classes if len(members[m]) < 3]
    for m in small:
        log.warning("membrane %r has %d record(s); placed entirely in train", m, len(members[m]))
    eligible = [m for m in classes if m not in small]
    n_elig = sum(len(members[m]) for m in eligible)
    sizes = [len(members[m]) for m in eligible]
    n_test = _apportion(sizes, round(split.test_frac * n_elig), split.test_frac)
    n_val = _apportion(sizes, round(split.val_frac * n_elig), split.val_frac)
    # every class with >= 3 records is represented in each non-empty partition
    if split.test_frac > 0:
        n_test = np.maximum(n_test, 1)
    if split.val_frac > 0:
        n_val = np.maximum(n_val, 1)

    train, val, test = [], [], []
    for m in small:
        train.extend(members[m])
    for m, nt, nv in zip(eligible, n_test, n_val):
        idx = np.array(members[m])[rng.permutation(len(members[m]))].tolist()
        test.extend(idx[:nt])
        val.extend(idx[nt:nt + nv])
        train.extend(idx[nt + nv:])
    return ds.subset(sorted(train)), ds.subset(sorted(val)), ds.subset(sorted(test))


def stratified_folds(ds, k, seed):
    """Assign each record to one of ``k`` folds, round-robin within membrane class."""
    rng = np.random.default_rng(seed)
    folds = np.empty(len(ds), dtype=int)
    offset = 0
    for m in MEMBRANES:
        idx = np.array([j for j, r in enumerate(ds.records) if r.membrane_id == m], dtype=int)
        if len(idx) == 0:
            continue
        idx = idx[rng.permutation(len(idx))]
        folds[idx] = (np.arange(len(idx)) + offset) % k
        offset += len(idx)
    return folds


# ---------------------------------------------------------------- augmentation

@dataclass(frozen=True)
class AugmentConfig:
    max_points_per_gap: int = 10
    physics_tolerance: float = 0.05
    bounds: tuple = LABEL_BOUNDS
    enforce_monotone: bool = True

    def __post_init__(self):
        if self.max_points_per_gap < 0:
            raise ValueError("max_points_per_gap must be >= 0")
        if not self.physics_tolerance > 0:
            raise ValueError("physics_tolerance must be positive")


@dataclass
class AugmentStats:
    series: int = 0
    candidates: int = 0
    accepted: int = 0
    rejected: dict = field(default_factory=lambda: {"monotone": 0, "bounds": 0, "physics": 0})


def _series_key(pt):
    return (pt.membrane_id, pt.temperature_stack, pt.pressure_cathode, pt.pressure_anode,
            pt.thickness, pt.compression, pt.pt_interlayer)


def _interpolator(i, x):
    if len(i) >= 4:
        return CubicSpline(i, x)
    deg = len(i) - 1
    return np.poly1d(np.polyfit(i, x, deg))


def within_tolerance(value, reference, tol):
    """Relative deviation test used to validate an interpolant against the oracle."""
    if not np.isfinite(reference) or reference == 0:
        return False
    return abs(value - reference) <= tol * abs(reference)


def augment(ds, cfg=AugmentConfig(), params=physics.PhysicsParams(), return_stats=False):
    """Interpolate along current density inside each experimental series.

    A series shares membrane, temperature, pressures, thickness, compression
    and interlayer flag. Interpolants are placed strictly inside each gap and
    kept only if they respect the gap's direction, the label bounds and the
    physics model within the relative tolerance. The returned dataset holds
    the experimental records followed by the accepted augmented ones.
    """
    stats = AugmentStats()
    lo, hi = cfg.bounds
    groups = {}
    for k, (pt, prov) in enumerate(zip(ds.records, ds.provenance)):
        if prov == "experimental" and pt.h2_concentration is not None:
            groups.setdefault(_series_key(pt), []).append(k)

    new_records, new_studies = [], []
    for key in sorted(groups, key=repr):
        idx = groups[key]
        by_i = {}
        for k in idx:
            by_i.setdefault(ds.records[k].current_density, []).append(k)
        i_vals = np.array(sorted(by_i))
        if len(i_vals) < 2 or cfg.max_points_per_gap == 0:
            continue
        x_vals = np.array([np.mean([ds.records[k].h2_concentration for k in by_i[v]]) for v in i_vals])
        template = ds.records[idx[0]]
        study = ds.studies[idx[0]]
        stats.series += 1
        curve = _interpolator(i_vals, x_vals)
        n = cfg.max_points_per_gap
        for (ia, ib), (xa, xb) in zip(zip(i_vals[:-1], i_vals[1:]), zip(x_vals[:-1], x_vals[1:])):
            grid = ia + (ib - ia) * np.arange(1, n + 1) / (n + 1)
            values = np.asarray(curve(grid), dtype=float)
            oracle = physics.transport_state(
                template.temperature_stack, template.pressure_cathode, template.pressure_anode,
                template.thickness, grid, template.compression, params).X_H2_ca
            increasing = xb >= xa
            last = xa
            for i_new, x_new, x_ref in zip(grid, values, oracle):
                stats.candidates += 1
                if cfg.enforce_monotone:
                    inside = min(xa, xb) <= x_new <= max(xa, xb)
                    ordered = x_new >= last if increasing else x_new <= last
                    if not (inside and ordered):
                        stats.rejected["monotone"] += 1
                        continue
                if not lo <= x_new <= hi:
                    stats.rejected["bounds"] += 1
                    continue
                if not within_tolerance(x_new, x_ref, cfg.physics_tolerance):
                    stats.rejected["physics"] += 1
                    continue
                last = x_new
                stats.accepted += 1
                new_records.append(replace(template, current_density=float(i_new),
                                           h2_concentration=float(x_new)))
                new_studies.append(study)

    out = Dataset(ds.records + tuple(new_records),
                  ds.provenance + ("augmented",) * len(new_records),
                  ds.studies + tuple(new_studies), ds.normalization_stats)
    return (out, stats) if return_stats else out
