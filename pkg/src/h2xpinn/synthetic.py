"""Oracle-generated datasets for testing, demos and the acceptance suite."""
from __future__ import annotations

import numpy as np

from . import physics
from .data import Dataset, OperatingPoint

# (membrane, thickness µm) classes spanning the experimental thickness range
THICKNESS_CLASSES = (
    ("Nafion 212 51um", 51.0),
    ("Fuma-Tech E-730", 130.0),
    ("Nafion 117 178um", 178.0),
)


def oracle_points(n, seed, temperature=(25.0, 85.0), pressure_cathode=(1.0, 80.0),
                  current_density=(0.1, 2.0), classes=THICKNESS_CLASSES, pressure_anode=1.0):
    """Uniformly sampled operating points (no labels)."""
    rng = np.random.default_rng(seed)
    T = rng.uniform(*temperature, size=n)
    P = rng.uniform(*pressure_cathode, size=n)
    i = rng.uniform(*current_density, size=n)
    cls = rng.integers(0, len(classes), size=n)
    return [
        OperatingPoint(float(T[k]), float(P[k]), pressure_anode, classes[cls[k]][1], float(i[k]),
                       classes[cls[k]][0])
        for k in range(n)
    ]


def label_points(points, params=physics.PhysicsParams(), noise_std=0.0, seed=0, study="synthetic"):
    """Attach oracle crossover labels (optionally with Gaussian noise, clipped to [0, 20] %)."""
    rng = np.random.default_rng(seed)
    out = []
    for pt in points:
        x = float(physics.crossover_concentration(pt, params).X_H2_ca)
        if noise_std > 0:
            x = float(np.clip(x + rng.normal(0.0, noise_std), 0.0, 20.0))
        out.append(OperatingPoint(**{**pt.__dict__, "h2_concentration": x}).validate())
    return Dataset(out, studies=[study] * len(out))


def oracle_dataset(n=200, seed=0, params=physics.PhysicsParams(), noise_std=0.0, **ranges):
    return label_points(oracle_points(n, seed, **ranges), params, noise_std, seed + 1)


def oracle_series(membrane="Nafion 117 178um", thickness=178.0, temperature=25.0,
                  pressures=(1.0, 6.0, 20.0, 40.0, 80.0), currents=(0.2, 0.4, 0.7, 1.0, 1.5, 2.0),
                  params=physics.PhysicsParams(), pressure_anode=1.0):
    """Grid of series (one per pressure) along current density, like digitized curves."""
    pts = [OperatingPoint(temperature, float(P), pressure_anode, thickness, float(i), membrane)
           for P in pressures for i in currents]
    return label_points(pts, params)


def oracle_series_design(n_series=25, points_per_series=8, seed=0, temperature=(25.0, 85.0),
                         pressure_cathode=(1.0, 80.0), current_density=(0.1, 2.0),
                         classes=THICKNESS_CLASSES, params=physics.PhysicsParams(), noise_std=0.0,
                         pressure_anode=1.0):
    """Polarization-style design: random (T, P_ca) series, log-spaced currents.

    Series cycle through the thickness classes so each class gets an equal
    share. Log spacing puts more points at low current density, where the
    crossover fraction changes fastest.
    """
    rng = np.random.default_rng(seed)
    currents = np.geomspace(*current_density, points_per_series)
    pts = []
    for s in range(n_series):
        T = float(rng.uniform(*temperature))
        P = float(rng.uniform(*pressure_cathode))
        membrane, thickness = classes[s % len(classes)]
        pts.extend(OperatingPoint(T, P, pressure_anode, thickness, float(i), membrane) for i in currents)
    return label_points(pts, params, noise_std, seed + 1)


def extrapolation_design(train_pressures=(1.0, 6.0, 20.0, 40.0, 80.0), temperatures=(25.0, 55.0, 85.0),
                         test_pressures=(40.0, 120.0, 160.0, 200.0), test_temperature=25.0,
                         test_class=("Nafion 117 178um", 178.0), currents=None, classes=THICKNESS_CLASSES,
                         params=physics.PhysicsParams()):
    """Training grid up to the largest training pressure and test series beyond it.

    Returns ``(train_ds, test_ds)``. The test series use one membrane at one
    temperature so each pressure slice is a single polarization curve.
    """
    currents = np.linspace(0.2, 2.0, 8) if currents is None else np.asarray(currents, dtype=float)
    parts = [oracle_series(m, th, T, train_pressures, currents, params)
             for T in temperatures for m, th in classes]
    train_ds = parts[0]
    for p in parts[1:]:
        train_ds = train_ds.concat(p)
    test_ds = oracle_series(test_class[0], test_class[1], test_temperature, test_pressures, currents, params)
    return train_ds, test_ds
