"""Hot numeric kernels for the dense network and the Adam update.

Two interchangeable implementations live here: plain numpy, and numba
``@njit`` versions of the same loops. The active one is chosen once at import
from the ``H2XPINN_NUMBA`` environment variable (``0``/``false``/``off``
forces numpy; anything else uses numba when it imports cleanly) and can be
switched at runtime with :func:`set_backend`.

Both backends compute the same quantities; results agree to rounding, not
bit-for-bit, so a determinism guarantee only holds within one backend.
"""
from __future__ import annotations

import os
import warnings
from types import SimpleNamespace

import numpy as np

IDENTITY, TANH, RELU, SILU = 0, 1, 2, 3
ACTIVATIONS = {"identity": IDENTITY, "tanh": TANH, "relu": RELU, "silu": SILU}


# ---------------------------------------------------------------- numpy path

def _np_activate(Z, act):
    if act == TANH:
        return np.tanh(Z)
    if act == RELU:
        return np.maximum(Z, 0.0)
    if act == SILU:
        return Z / (1.0 + np.exp(-Z))
    return Z


def _np_activation_grad(Z, A, act):
    if act == TANH:
        return 1.0 - A * A
    if act == RELU:
        return (Z > 0.0).astype(Z.dtype)
    if act == SILU:
        s = 1.0 / (1.0 + np.exp(-Z))
        return s * (1.0 + Z * (1.0 - s))
    return np.ones_like(Z)


def np_dense_forward(X, W, b, act):
    Z = X @ W + b
    return Z, _np_activate(Z, act)


def np_dense_backward(dA, X, Z, A, W, act, need_dx):
    dZ = dA if act == IDENTITY else dA * _np_activation_grad(Z, A, act)
    dW = X.T @ dZ
    db = dZ.sum(axis=0)
    dX = dZ @ W.T if need_dx else None
    return dX, dW, db


def np_adam_update(theta, g, m, v, lr, beta1, beta2, eps, t):
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    theta -= lr * m_hat / (np.sqrt(v_hat) + eps)


numpy_backend = SimpleNamespace(
    name="numpy",
    dense_forward=np_dense_forward,
    dense_backward=np_dense_backward,
    adam_update=np_adam_update,
)


# ---------------------------------------------------------------- numba path

def _build_numba_backend():
    from numba import njit

    @njit(cache=True, nogil=True)
    def dense_forward(X, W, b, act):
        Z = np.dot(X, W)
        A = np.empty_like(Z)
        n, m = Z.shape
        for r in range(n):
            for c in range(m):
                z = Z[r, c] + b[c]
                Z[r, c] = z
                if act == 1:
                    A[r, c] = np.tanh(z)
                elif act == 2:
                    A[r, c] = z if z > 0.0 else 0.0
                elif act == 3:
                    A[r, c] = z / (1.0 + np.exp(-z))
                else:
                    A[r, c] = z
        return Z, A

    @njit(cache=True, nogil=True)
    def _dense_backward(dA, X, Z, A, W, act):
        n, m = dA.shape
        dZ = np.empty_like(dA)
        db = np.zeros(m)
        for r in range(n):
            for c in range(m):
                if act == 1:
                    d = dA[r, c] * (1.0 - A[r, c] * A[r, c])
                elif act == 2:
                    d = dA[r, c] if Z[r, c] > 0.0 else 0.0
                elif act == 3:
                    s = 1.0 / (1.0 + np.exp(-Z[r, c]))
                    d = dA[r, c] * s * (1.0 + Z[r, c] * (1.0 - s))
                else:
                    d = dA[r, c]
                dZ[r, c] = d
                db[c] += d
        dW = np.dot(np.ascontiguousarray(X.T), dZ)
        dX = np.dot(dZ, np.ascontiguousarray(W.T))
        return dX, dW, db

    def dense_backward(dA, X, Z, A, W, act, need_dx):
        dX, dW, db = _dense_backward(dA, X, Z, A, W, act)
        return (dX if need_dx else None), dW, db

    @njit(cache=True, nogil=True, fastmath=True)
    def adam_update(theta, g, m, v, lr, beta1, beta2, eps, t):
        c1 = 1.0 - beta1**t
        c2 = 1.0 - beta2**t
        for k in range(theta.shape[0]):
            gk = g[k]
            m[k] = beta1 * m[k] + (1.0 - beta1) * gk
            v[k] = beta2 * v[k] + (1.0 - beta2) * gk * gk
            theta[k] -= lr * (m[k] / c1) / (np.sqrt(v[k] / c2) + eps)

    return SimpleNamespace(
        name="numba",
        dense_forward=dense_forward,
        dense_backward=dense_backward,
        adam_update=adam_update,
    )


_numba_backend = None


def numba_backend():
    """Build (once) and return the numba backend; raises ImportError without numba."""
    global _numba_backend
    if _numba_backend is None:
        _numba_backend = _build_numba_backend()
    return _numba_backend


def _flag_enabled(value):
    return value.strip().lower() not in {"0", "false", "no", "off"}


def _initial_backend():
    if not _flag_enabled(os.environ.get("H2XPINN_NUMBA", "1")):
        return numpy_backend
    try:
        return numba_backend()
    except ImportError:  # pragma: no cover - numba is a declared dependency
        warnings.warn("numba unavailable; falling back to numpy kernels")
        return numpy_backend


_active = _initial_backend()


def active():
    return _active


def set_backend(name):
    """Select ``"numpy"`` or ``"numba"`` kernels; returns the previous backend name."""
    global _active
    previous = _active.name
    if name == "numpy":
        _active = numpy_backend
    elif name == "numba":
        _active = numba_backend()
    else:
        raise ValueError(f"unknown backend {name!r}")
    return previous
