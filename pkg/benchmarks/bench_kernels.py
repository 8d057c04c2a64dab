"""Compare the numba and numpy kernel backends.

Times the dense forward pass, the dense backward pass and the Adam update at
the network's real shapes, then a short end-to-end training run. Numba is
warmed up (compiled) before timing. Both backends must agree numerically; the
script checks that first and refuses to time a backend that disagrees.

    python3 benchmarks/bench_kernels.py [--repeat 200] [--json out.json]
"""
import argparse
import json
import time

import numpy as np

from h2xpinn import _kernels
from h2xpinn.data import SplitSpec, normalize, stratified_split
from h2xpinn.synthetic import oracle_dataset
from h2xpinn.training import TrainConfig, train


def _timeit(fn, repeat):
    fn()  # warm-up (numba compile / cache load)
    samples = np.empty(repeat)
    for k in range(repeat):
        t0 = time.perf_counter_ns()
        fn()
        samples[k] = (time.perf_counter_ns() - t0) / 1e3
    return float(np.median(samples)), float(np.percentile(samples, 95))


def kernel_cases(batch, width, rng):
    X = rng.standard_normal((batch, width))
    W = rng.standard_normal((width, width)) / np.sqrt(width)
    b = rng.standard_normal(width)
    theta = rng.standard_normal(17793)
    g = rng.standard_normal(17793)

    def cases(be):
        Z, A = be.dense_forward(X, W, b, _kernels.TANH)
        dA = rng.standard_normal(A.shape)
        m, v = np.zeros_like(theta), np.zeros_like(theta)
        th = theta.copy()
        return {
            "dense_forward": lambda: be.dense_forward(X, W, b, _kernels.TANH),
            "dense_backward": lambda: be.dense_backward(dA, X, Z, A, W, _kernels.TANH, True),
            "adam_update": lambda: be.adam_update(th, g, m, v, 1e-3, 0.9, 0.999, 1e-8, 10),
        }
    return X, W, b, cases


def check_agreement(X, W, b):
    nb = _kernels.numba_backend()
    np_be = _kernels.numpy_backend
    Z1, A1 = np_be.dense_forward(X, W, b, _kernels.TANH)
    Z2, A2 = nb.dense_forward(X, W, b, _kernels.TANH)
    err = max(np.abs(A1 - A2).max(), np.abs(Z1 - Z2).max())
    if err > 1e-10:
        raise SystemExit(f"backends disagree on dense_forward (max abs diff {err:.2e})")
    return err


def train_time(backend, epochs):
    _kernels.set_backend(backend)
    ds = oracle_dataset(200, seed=0)
    tr, va, _ = stratified_split(ds, SplitSpec(seed=42))
    cfg = TrainConfig(max_epochs=epochs, early_stop_patience=10**6)
    train(normalize(tr), va, TrainConfig(max_epochs=2))  # warm-up
    t0 = time.perf_counter()
    train(normalize(tr), va, cfg)
    return time.perf_counter() - t0


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--batch", type=int, default=32)
    ap.add_argument("--width", type=int, default=128)
    ap.add_argument("--epochs", type=int, default=200)
    ap.add_argument("--json", help="write results to this path")
    args = ap.parse_args(argv)

    rng = np.random.default_rng(0)
    X, W, b, cases = kernel_cases(args.batch, args.width, rng)
    err = check_agreement(X, W, b)
    results = {"shape": [args.batch, args.width], "forward_max_abs_diff": err, "kernels": {}, "train_s": {}}
    backends = {"numpy": _kernels.numpy_backend, "numba": _kernels.numba_backend()}
    print(f"{'kernel':<16}{'backend':<8}{'p50 us':>10}{'p95 us':>10}")
    for name in ("dense_forward", "dense_backward", "adam_update"):
        for bname, be in backends.items():
            p50, p95 = _timeit(cases(be)[name], args.repeat)
            results["kernels"].setdefault(name, {})[bname] = {"p50_us": p50, "p95_us": p95}
            print(f"{name:<16}{bname:<8}{p50:>10.1f}{p95:>10.1f}")
        r = results["kernels"][name]
        print(f"{'':<16}{'numba speedup':<16}{r['numpy']['p50_us'] / r['numba']['p50_us']:>6.2f}x")

    previous = _kernels.active().name
    for bname in backends:
        results["train_s"][bname] = train_time(bname, args.epochs)
        print(f"train {args.epochs} epochs ({bname}): {results['train_s'][bname]:.2f} s")
    _kernels.set_backend(previous)
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=1, sort_keys=True)
    return results


if __name__ == "__main__":
    main()
