"""Mechanistic hydrogen-crossover model for a PEM electrolyzer membrane.

All internal arithmetic is double precision in a cm-mol-s-bar unit system.
Conversions happen at the boundary: thickness and compression arrive in µm,
stack temperature in °C, and the base diffusivity is configured in m²/s.

Every function accepts scalars or numpy arrays and broadcasts, so the same
chain serves single operating points and whole training batches.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

KELVIN_OFFSET = 273.15
UM_TO_CM = 1.0e-4
M2_TO_CM2 = 1.0e4

# Antoine constants for water, 1-100 °C, pressure in mmHg
_ANTOINE_A, _ANTOINE_B, _ANTOINE_C = 8.07131, 1730.63, 233.426
_MMHG_TO_BAR = 1.333223684e-3

RESIDUAL_NAMES = (
    "faraday_h2",
    "faraday_o2",
    "fick",
    "henry_cathode",
    "henry_anode",
    "thermal",
    "water_activity",
    "water_content",
    "diffusion",
    "temperature_dependence",
    "crossover_ratio",
)


class PhysicsDomainError(ValueError):
    """Input outside the domain where the transport model is defined."""


@dataclass(frozen=True)
class PhysicsParams:
    faraday_const: float = 96485.0  # C/mol
    porosity: float = 0.28
    tortuosity: float = 1.5
    darcy_coeff: float = 1.0e-5  # bar^2 / (A cm^-2)
    ref_temp: float = 298.0  # K
    base_diffusivity: float = 1.0e-9  # m^2/s
    temp_coeff: float = 0.01  # 1/K
    solubility_cathode: float = 1.0e-6  # mol cm^-3 bar^-1
    solubility_anode: float = 1.0e-6  # mol cm^-3 bar^-1
    sat_pressure_model: str = "fixed_activity"
    water_activity: float = 1.0  # used by fixed_activity

    def __post_init__(self):
        for f in fields(self):
            if f.name in ("sat_pressure_model", "water_activity"):
                continue
            value = getattr(self, f.name)
            if not np.isfinite(value) or value <= 0:
                raise ValueError(f"{f.name} must be strictly positive, got {value}")
        if self.sat_pressure_model not in ("fixed_activity", "antoine"):
            raise ValueError(f"unknown sat_pressure_model {self.sat_pressure_model!r}")
        if not 0.0 <= self.water_activity <= 1.0:
            raise ValueError("water_activity must lie in [0, 1]")

    @property
    def diffusivity_cm2(self):
        return self.base_diffusivity * M2_TO_CM2

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise KeyError(f"unknown physics parameter(s): {sorted(unknown)}")
        return cls(**{k: (v if k == "sat_pressure_model" else float(v)) for k, v in data.items()})

    @classmethod
    def load(cls, path):
        """Read parameters from a TOML or JSON file (optionally under a ``[physics]`` table)."""
        path = Path(path)
        text = path.read_text()
        if path.suffix.lower() == ".json":
            data = json.loads(text)
        else:
            try:
                import tomllib
            except ModuleNotFoundError:
                import tomli as tomllib
            data = tomllib.loads(text)
        return cls.from_dict(data.get("physics", data))

    def with_solubility(self, cathode=None, anode=None):
        return replace(
            self,
            solubility_cathode=self.solubility_cathode if cathode is None else float(cathode),
            solubility_anode=self.solubility_anode if anode is None else float(anode),
        )


@dataclass
class TransportState:
    """Every intermediate of the crossover chain (cm-mol-s-bar units, T_m in °C)."""

    M_H2: np.ndarray
    M_O2: np.ndarray
    P_ca_eff: np.ndarray
    c_sat_ca: np.ndarray
    c_sat_an: np.ndarray
    T_m: np.ndarray
    a: np.ndarray
    lambda_m: np.ndarray
    D_H2w: np.ndarray
    D_eff: np.ndarray
    M_H2_co: np.ndarray
    X_H2_ca: np.ndarray
    t_dif: np.ndarray
    p_h2o: np.ndarray = field(default=None)
    p_sat: np.ndarray = field(default=None)

    def replace(self, **changes):
        return replace(self, **changes)


def _check_current(i):
    if np.any(np.asarray(i) < 0):
        raise PhysicsDomainError("current density must be non-negative")


def faraday_rates(i, p=PhysicsParams()):
    """H2 and O2 production rates (mol s^-1 cm^-2) for current density ``i`` in A/cm²."""
    _check_current(i)
    i = np.asarray(i, dtype=float)
    M_O2 = i / (4.0 * p.faraday_const)
    # doubling is exact, so the 2:1 stoichiometry holds even for subnormal rates
    return 2.0 * M_O2, M_O2


def effective_cathode_pressure(P_ca, i, p=PhysicsParams()):
    _check_current(i)
    if np.any(np.asarray(P_ca) < 0):
        raise PhysicsDomainError("cathode pressure must be non-negative")
    # hypot avoids squaring P_ca, which underflows for tiny pressures
    return np.hypot(np.asarray(P_ca, dtype=float), np.sqrt(p.darcy_coeff * np.asarray(i, dtype=float)))


def membrane_temperature(T_stack, i):
    """Membrane temperature in °C including ohmic heating."""
    _check_current(i)
    i = np.asarray(i, dtype=float)
    return T_stack + 0.5 * i + 0.1 * i * i


def water_content(a):
    """Springer correlation: membrane water content from water activity."""
    a = np.asarray(a, dtype=float)
    if np.any((a < 0) | (a > 1)):
        raise PhysicsDomainError("water activity must lie in [0, 1]")
    return 0.043 + 17.81 * a - 39.85 * a**2 + 36.0 * a**3


def saturation_pressure(T_c):
    """Water saturation pressure in bar (Antoine correlation, T in °C)."""
    T_c = np.asarray(T_c, dtype=float)
    return 10.0 ** (_ANTOINE_A - _ANTOINE_B / (_ANTOINE_C + T_c)) * _MMHG_TO_BAR


def water_activity(T_stack, T_m, p=PhysicsParams()):
    """Return ``(a, p_h2o, p_sat)``.

    ``fixed_activity`` pins ``a`` to the configured value. ``antoine`` assumes
    the feed water vapour is saturated at stack temperature and evaluates
    it against saturation at the (hotter) membrane temperature.
    """
    p_sat = saturation_pressure(T_m)
    if p.sat_pressure_model == "antoine":
        p_h2o = np.minimum(saturation_pressure(T_stack), p_sat)
    else:
        p_h2o = p.water_activity * p_sat
    return p_h2o / p_sat, p_h2o, p_sat


def diffusivity(T_m_kelvin, p=PhysicsParams()):
    """Return ``(D_H2w, D_eff)`` in cm²/s for membrane temperature in K."""
    T = np.asarray(T_m_kelvin, dtype=float)
    if np.any(T <= 0):
        raise PhysicsDomainError("absolute temperature must be positive")
    factor = 1.0 + p.temp_coeff * (T - p.ref_temp)
    if np.any(factor <= 0):
        raise PhysicsDomainError("linearised diffusivity is non-positive at this temperature")
    D_H2w = p.diffusivity_cm2 * factor
    return D_H2w, (p.porosity / p.tortuosity) * D_H2w


def transport_state(T_stack, P_ca, P_an, thickness_um, i, compression_um=0.0, p=PhysicsParams(),
                    allow_zero_current=False):
    """Evaluate the full crossover chain; inputs broadcast against each other.

    With ``allow_zero_current`` the crossover fraction is NaN where ``i == 0``
    instead of raising.
    """
    i = np.asarray(i, dtype=float)
    if np.any(i == 0) and not allow_zero_current:
        raise PhysicsDomainError("undefined concentration: crossover fraction needs i > 0")
    t_dif = (np.asarray(thickness_um, dtype=float) - np.asarray(compression_um, dtype=float)) * UM_TO_CM
    if np.any(t_dif <= 0):
        raise PhysicsDomainError("diffusion length (thickness - compression) must be positive")
    if np.any(np.asarray(P_an) < 0):
        raise PhysicsDomainError("anode pressure must be non-negative")

    M_H2, M_O2 = faraday_rates(i, p)
    P_eff = effective_cathode_pressure(P_ca, i, p)
    c_ca = p.solubility_cathode * P_eff
    c_an = p.solubility_anode * np.asarray(P_an, dtype=float)
    T_m = membrane_temperature(T_stack, i)
    a, p_h2o, p_sat = water_activity(T_stack, T_m, p)
    lam = water_content(a)
    D_H2w, D_eff = diffusivity(T_m + KELVIN_OFFSET, p)
    M_co = D_eff * (c_ca - c_an) / t_dif
    with np.errstate(divide="ignore", invalid="ignore"):
        X = np.where(M_O2 > 0, M_co / np.where(M_O2 > 0, M_O2, 1.0) * 100.0, np.nan)
    return TransportState(
        M_H2=M_H2, M_O2=M_O2, P_ca_eff=P_eff, c_sat_ca=c_ca, c_sat_an=c_an, T_m=T_m, a=a,
        lambda_m=lam, D_H2w=D_H2w, D_eff=D_eff, M_H2_co=M_co, X_H2_ca=X, t_dif=t_dif,
        p_h2o=p_h2o, p_sat=p_sat,
    )


def crossover_concentration(pt, p=PhysicsParams()):
    """Transport state for one :class:`~h2xpinn.data.OperatingPoint`."""
    return transport_state(pt.temperature_stack, pt.pressure_cathode, pt.pressure_anode,
                           pt.thickness, pt.current_density, pt.compression, p)


def crossover_fraction(features, p=PhysicsParams(), allow_zero_current=False):
    """H2-in-O2 percentage for an (n, 8) matrix of physical encoded features."""
    F = np.atleast_2d(np.asarray(features, dtype=float))
    state = transport_state(F[:, 0], F[:, 1], F[:, 2], F[:, 3], F[:, 4], F[:, 6], p,
                            allow_zero_current=allow_zero_current)
    return state.X_H2_ca


def physics_residuals(pt, candidate, p=PhysicsParams()):
    """Eleven squared residuals of ``candidate`` against the governing relations.

    ``pt`` supplies the inputs (T_stack, pressures, current density). Order
    follows :data:`RESIDUAL_NAMES`; the mean of the vector is the physics loss
    of that record. Arrays broadcast, giving shape ``(11, n)``.
    """
    i = np.asarray(pt.current_density, dtype=float)
    s = candidate
    F = p.faraday_const
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = s.M_H2_co / s.M_O2 * 100.0
    terms = [
        s.M_H2 - i / (2.0 * F),
        s.M_O2 - i / (4.0 * F),
        s.M_H2_co - s.D_eff * (s.c_sat_ca - s.c_sat_an) / s.t_dif,
        s.c_sat_ca - p.solubility_cathode * s.P_ca_eff,
        s.c_sat_an - p.solubility_anode * np.asarray(pt.pressure_anode, dtype=float),
        s.T_m - (np.asarray(pt.temperature_stack, dtype=float) + 0.5 * i + 0.1 * i * i),
        s.a - s.p_h2o / s.p_sat,
        s.lambda_m - (0.043 + 17.81 * s.a - 39.85 * s.a**2 + 36.0 * s.a**3),
        s.D_eff - (p.porosity / p.tortuosity) * s.D_H2w,
        s.D_H2w - p.diffusivity_cm2 * (1.0 + p.temp_coeff * (s.T_m + KELVIN_OFFSET - p.ref_temp)),
        s.X_H2_ca - ratio,
    ]
    return np.array([np.square(np.asarray(t, dtype=float)) for t in terms])


def calibrate_solubility(features, labels, p=PhysicsParams()):
    """Least-squares fit of the cathode solubility on labelled points.

    The crossover fraction is affine in the cathode solubility, so the fit is
    closed form. Points with zero current are skipped.
    """
    F = np.atleast_2d(np.asarray(features, dtype=float))
    y = np.asarray(labels, dtype=float)
    keep = F[:, 4] > 0
    F, y = F[keep], y[keep]
    if len(y) == 0:
        raise PhysicsDomainError("calibration needs at least one point with i > 0")
    unit = p.with_solubility(cathode=1.0, anode=p.solubility_anode)
    s = transport_state(F[:, 0], F[:, 1], F[:, 2], F[:, 3], F[:, 4], F[:, 6], unit)
    # X = k * (S_ca * P_eff - S_an * P_an); k collects D_eff / t_dif / M_O2 * 100
    k = s.D_eff / s.t_dif / s.M_O2 * 100.0
    basis = k * s.P_ca_eff
    offset = k * s.c_sat_an
    denom = float(basis @ basis)
    if denom <= 0:
        raise PhysicsDomainError("degenerate calibration design")
    S_ca = float(basis @ (y + offset)) / denom
    if S_ca <= 0:
        raise PhysicsDomainError(f"calibrated cathode solubility is non-positive ({S_ca:.3e})")
    return p.with_solubility(cathode=S_ca)
