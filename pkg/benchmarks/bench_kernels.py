"""Compare the compiled kernels against the numpy fallback.

Times every kernel on a few problem sizes with both backends, checks that the
outputs agree, and prints one row per (kernel, size).

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]
"""
import argparse
import json
import sys
import timeit

import numpy as np

from ncsphere import _backend, _fallback


def _inputs(n, K, d, seed=0):
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(K), n // K).astype(np.int64)
    H = rng.normal(size=(labels.size, d))
    H /= np.linalg.norm(H, axis=1, keepdims=True)
    W = rng.normal(size=(K, d))
    W /= np.linalg.norm(W, axis=1, keepdims=True)
    counts = np.bincount(labels, minlength=K).astype(np.int64)
    A = rng.normal(size=(d, d))
    return {"S": H @ W.T, "T": H @ H.T, "labels": labels, "counts": counts, "sym": A + A.T}


CASES = {
    "proto_contrast[nonl]": lambda k, x: k.proto_contrast(x["S"], x["labels"], x["counts"], 10.0, _fallback.MODE_NONL),
    "proto_contrast[normface]": lambda k, x: k.proto_contrast(x["S"], x["labels"], x["counts"], 10.0,
                                                              _fallback.MODE_NORMFACE),
    "proto_softmax": lambda k, x: k.proto_softmax(x["S"], x["labels"], x["counts"], 10.0),
    "scl_contrast": lambda k, x: k.scl_contrast(x["T"], x["labels"], x["counts"], 10.0),
    "jacobi_eigh": lambda k, x: k.jacobi_eigh(x["sym"]),
}
SIZES = ((200, 10, 16), (1000, 10, 64), (2000, 100, 128))


def _max_diff(a, b, kernel):
    if kernel == "jacobi_eigh":
        # eigenvectors are defined up to sign; compare spectra only
        return float(np.max(np.abs(np.sort(a[0]) - np.sort(b[0]))))
    return max(abs(a[0] - b[0]), float(np.max(np.abs(np.asarray(a[1]) - np.asarray(b[1])))))


def run(repeat=5):
    if not _backend.COMPILED:
        raise RuntimeError("compiled kernels not importable; build with pip install -e . --no-build-isolation")
    fast, slow = _backend.get("cython"), _backend.get("numpy")
    rows = []
    for n, K, d in SIZES:
        x = _inputs(n, K, d)
        for name, fn in CASES.items():
            diff = _max_diff(fn(fast, x), fn(slow, x), name)
            t_fast = min(timeit.repeat(lambda: fn(fast, x), number=1, repeat=repeat))
            t_slow = min(timeit.repeat(lambda: fn(slow, x), number=1, repeat=repeat))
            rows.append({"kernel": name, "n": n, "K": K, "d": d, "cython_ms": 1e3 * t_fast,
                         "numpy_ms": 1e3 * t_slow, "speedup": t_slow / t_fast, "max_abs_diff": diff})
    return rows


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--json", help="also write the rows to this file")
    args = p.parse_args(argv)
    rows = run(args.repeat)
    print(f"{'kernel':26s} {'n':>5s} {'K':>4s} {'d':>4s} {'cython ms':>10s} {'numpy ms':>10s} {'speedup':>8s} {'max diff':>9s}")
    for r in rows:
        print(f"{r['kernel']:26s} {r['n']:5d} {r['K']:4d} {r['d']:4d} {r['cython_ms']:10.3f} {r['numpy_ms']:10.3f} "
              f"{r['speedup']:8.2f} {r['max_abs_diff']:9.1e}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
