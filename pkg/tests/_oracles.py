"""Independent reference computations used as test oracles.

Nothing here imports the package's numerical code: the crossover chain is
recomputed in SI units, the forward pass is plain-Python loops over a
parameter layout decoded by hand, and gradients come from central finite
differences.
"""
import math

import numpy as np

FARADAY = 96485.0


def si_crossover(T_c, P_ca_bar, P_an_bar, thickness_um, i_a_cm2, compression_um=0.0, *,
                 S_ca=1e-6, S_an=1e-6, K_D=1e-5, D0=1e-9, alpha=0.01, T_ref=298.0, eps=0.28, tau=1.5):
    """H2-in-O2 percentage evaluated entirely in SI units (m, Pa, A/m², mol/m³)."""
    i_si = i_a_cm2 * 1e4  # A/m²
    M_O2 = i_si / (4.0 * FARADAY)  # mol m^-2 s^-1
    K_D_si = K_D * 1e10 / 1e4  # bar² per A/cm² -> Pa² per A/m²
    P_eff = math.sqrt((P_ca_bar * 1e5) ** 2 + K_D_si * i_si)  # Pa
    S_ca_si, S_an_si = S_ca * 10.0, S_an * 10.0  # mol cm^-3 bar^-1 -> mol m^-3 Pa^-1
    c_ca, c_an = S_ca_si * P_eff, S_an_si * P_an_bar * 1e5
    T_m = T_c + 0.5 * i_a_cm2 + 0.1 * i_a_cm2 ** 2
    D = D0 * (1.0 + alpha * (T_m + 273.15 - T_ref))
    D_eff = eps / tau * D
    L = (thickness_um - compression_um) * 1e-6
    flux = D_eff * (c_ca - c_an) / L
    return flux / M_O2 * 100.0


def decode_layers(flat, sizes):
    """Split a flat parameter vector into per-layer nested lists (W[in][out], b[out])."""
    layers, pos = [], 0
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        W = [[float(flat[pos + r * fan_out + c]) for c in range(fan_out)] for r in range(fan_in)]
        pos += fan_in * fan_out
        b = [float(v) for v in flat[pos:pos + fan_out]]
        pos += fan_out
        layers.append((W, b))
    assert pos == len(flat)
    return layers


def loop_forward(flat, sizes, x):
    """Dependency-free forward pass: tanh hidden layers, linear output."""
    a = [float(v) for v in x]
    layers = decode_layers(flat, sizes)
    for li, (W, b) in enumerate(layers):
        z = [b[c] + sum(a[r] * W[r][c] for r in range(len(a))) for c in range(len(b))]
        a = z if li == len(layers) - 1 else [math.tanh(v) for v in z]
    return a[0]


def central_difference(f, theta, indices, h=1e-5):
    """Central-difference partial derivatives of scalar ``f(theta)`` at ``indices``."""
    out = np.empty(len(indices))
    for n, k in enumerate(indices):
        old = theta[k]
        theta[k] = old + h
        up = f(theta)
        theta[k] = old - h
        down = f(theta)
        theta[k] = old
        out[n] = (up - down) / (2.0 * h)
    return out


def rel_err(a, b, floor=1e-8):
    """Elementwise relative error with an absolute floor for near-zero entries."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
