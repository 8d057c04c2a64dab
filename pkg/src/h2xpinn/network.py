"""Dense feedforward network with hand-derived reverse-mode gradients.

Parameters live in one flat float64 vector; per-layer weight matrices
``(fan_in, fan_out)`` and bias vectors are views into it, so the optimizer
updates a single array and checkpoints serialize one buffer.
"""
from __future__ import annotations

import base64
import json
from pathlib import Path

import numpy as np

from . import _kernels
from .data import FeatureScaling

DEFAULT_SIZES = (8, 128, 128, 1)
CHECKPOINT_FORMAT = "h2xpinn-mlp"
CHECKPOINT_VERSION = 1


def param_count(sizes):
    return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))


def _layout(sizes):
    """Offsets of (W, b) for each layer inside the flat vector."""
    spans, off = [], 0
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        w = (off, off + fan_in * fan_out)
        off = w[1]
        b = (off, off + fan_out)
        off = b[1]
        spans.append((w, b, fan_in, fan_out))
    return spans


class Mlp:
    """Feedforward net: hidden layers use ``activation``, the output is linear."""

    def __init__(self, sizes, params=None, activation="tanh"):
        sizes = tuple(int(s) for s in sizes)
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError(f"invalid layer sizes {sizes}")
        if activation not in _kernels.ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.sizes = sizes
        self.activation = activation
        n = param_count(sizes)
        self.params = np.zeros(n) if params is None else np.ascontiguousarray(params, dtype=np.float64)
        if self.params.shape != (n,):
            raise ValueError(f"expected {n} parameters, got {self.params.shape}")
        self._spans = _layout(sizes)
        self._act = _kernels.ACTIVATIONS[activation]
        if sizes == DEFAULT_SIZES:
            assert n == 17_793

    @classmethod
    def init(cls, seed, sizes=DEFAULT_SIZES, activation="tanh"):
        """Xavier-uniform weights, zero biases; fully determined by ``seed``."""
        net = cls(sizes, activation=activation)
        rng = np.random.default_rng(seed)
        for W, _ in net.layers():
            limit = np.sqrt(6.0 / (W.shape[0] + W.shape[1]))
            W[...] = rng.uniform(-limit, limit, size=W.shape)
        return net

    def copy(self):
        return Mlp(self.sizes, self.params.copy(), self.activation)

    def param_count(self):
        return self.params.size

    def split(self, flat):
        """Per-layer ``(W, b)`` views into ``flat`` (parameters or gradients)."""
        return [(flat[w0:w1].reshape(fi, fo), flat[b0:b1]) for (w0, w1), (b0, b1), fi, fo in self._spans]

    def layers(self):
        return self.split(self.params)

    def _acts(self):
        n = len(self._spans)
        return [self._act if k < n - 1 else _kernels.IDENTITY for k in range(n)]

    def _forward_cache(self, X):
        k = _kernels.active()
        A = np.ascontiguousarray(X, dtype=np.float64)
        cache = []
        for (W, b), act in zip(self.layers(), self._acts()):
            Z, A_next = k.dense_forward(A, W, b, act)
            cache.append((A, Z, A_next))
            A = A_next
        return A, cache

    def batch_forward(self, X):
        """Outputs for an ``(n, d)`` input matrix as a length-``n`` vector."""
        X = np.atleast_2d(X)
        out, _ = self._forward_cache(X)
        return out[:, 0] if out.shape[1] == 1 else out

    def forward(self, x):
        return float(self.batch_forward(np.asarray(x, dtype=float)[None, :])[0])

    def gradient(self, X, upstream):
        """Flat gradient of ``sum_k upstream[k] * output_k`` w.r.t. all parameters."""
        X = np.atleast_2d(X)
        out, cache = self._forward_cache(X)
        dA = np.ascontiguousarray(np.asarray(upstream, dtype=np.float64).reshape(out.shape))
        return self._backprop(cache, dA)

    def value_and_gradient(self, X, loss_grad_fn):
        """Forward pass, then backprop ``dL/doutput`` returned by ``loss_grad_fn(pred)``.

        ``loss_grad_fn`` must return ``(loss, dloss_dpred)``.
        """
        X = np.atleast_2d(X)
        out, cache = self._forward_cache(X)
        pred = out[:, 0]
        loss, dpred = loss_grad_fn(pred)
        grads = self._backprop(cache, np.ascontiguousarray(np.asarray(dpred, dtype=np.float64)[:, None]))
        return loss, grads

    def _backprop(self, cache, dA):
        k = _kernels.active()
        grads = np.empty_like(self.params)
        g_layers = self.split(grads)
        acts = self._acts()
        layers = self.layers()
        for li in range(len(cache) - 1, -1, -1):
            A_in, Z, A_out = cache[li]
            W, _ = layers[li]
            dA, dW, db = k.dense_backward(dA, A_in, Z, A_out, W, acts[li], li > 0)
            g_layers[li][0][...] = dW
            g_layers[li][1][...] = db
        return grads

    def backward(self, x, upstream=1.0):
        """Gradient of ``upstream * forward(x)`` for a single input vector."""
        return self.gradient(np.asarray(x, dtype=float)[None, :], [upstream])


# ------------------------------------------------------------------ checkpoints

def _encode_params(params):
    return base64.b64encode(np.ascontiguousarray(params, dtype="<f8").tobytes()).decode("ascii")


def _decode_params(text):
    return np.frombuffer(base64.b64decode(text), dtype="<f8").astype(np.float64)


def checkpoint_dict(model, scaling=None, metadata=None):
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "layer_sizes": list(model.sizes),
        "activation": model.activation,
        "dtype": "float64",
        "byteorder": "little",
        "layout": "row-major; per layer W(fan_in, fan_out) then b",
        "params": _encode_params(model.params),
        "normalization": None if scaling is None else scaling.to_dict(),
        "metadata": metadata or {},
    }


def save_checkpoint(path, model, scaling=None, metadata=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(checkpoint_dict(model, scaling, metadata), indent=1, sort_keys=True) + "\n")
    return path


def checkpoint_from_dict(blob):
    if blob.get("format") != CHECKPOINT_FORMAT:
        raise ValueError("not an h2xpinn checkpoint")
    if blob.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {blob.get('version')}")
    if blob.get("dtype") != "float64" or blob.get("byteorder") != "little":
        raise ValueError("checkpoint must hold little-endian float64 parameters")
    model = Mlp(blob["layer_sizes"], _decode_params(blob["params"]), blob["activation"])
    norm = blob.get("normalization")
    scaling = None if norm is None else FeatureScaling.from_dict(norm)
    return model, scaling, blob.get("metadata", {})


def load_checkpoint(path):
    """Return ``(model, scaling, metadata)``."""
    return checkpoint_from_dict(json.loads(Path(path).read_text()))
