#!/usr/bin/env python3
"""Times the numba kernels against their numpy fallbacks.

Run without LESIONKIT_NO_NUMBA so both backends are importable; each
kernel is checked for agreement between backends before timing.

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import time

import numpy as np

from lesionkit.kernels import NUMBA_IMPLS, NUMPY_IMPLS


def timeit(fn, args, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def workloads(rng):
    mask = (rng.random((512, 512)) < 0.5).astype(np.uint8)
    levels = rng.integers(1, 33, size=(512, 512)).astype(np.int64)
    roi = (rng.random((512, 512)) < 0.8).astype(np.uint8)
    x = rng.normal(size=(8, 64, 64))
    w = rng.normal(size=(8, 8, 3, 3))
    b = rng.normal(size=8)
    img = rng.normal(size=(352, 352))
    kern = rng.normal(size=81)
    X = rng.normal(size=(600, 128))
    y = rng.integers(0, 2, size=600).astype(np.float64)
    X[:, :10] += 1.5 * (y[:, None] - 0.5)
    step = 4.0 * 600 / np.linalg.eigvalsh(
        np.column_stack([np.ones(600), X]).T @ np.column_stack([np.ones(600), X]))[-1]
    return [
        ("label_components", (mask, True)),
        ("zone_labels", (levels, roi)),
        ("glcm_counts", (levels, roi, 32, 0, 1)),
        ("glrlm_counts", (levels, roi, 32, 1, 1, 512)),
        ("conv2d_dilated", (x, w, b, 6)),
        ("correlate_rows_valid", (img, kern)),
        ("lasso_mfista", (X, y, 0.01, np.zeros(128), 0.0, step, 400, 1e-10, 1e-7)),
    ]


def agreement(name, out_np, out_nb):
    if name == "lasso_mfista":
        return np.allclose(out_np[0], out_nb[0], atol=1e-8) \
            and abs(out_np[2] - out_nb[2]) < 1e-10
    if name in ("label_components", "zone_labels"):
        # labels may differ by numbering: compare the induced partitions
        def sig(labels):
            return {frozenset(np.flatnonzero(labels.ravel() == lab).tolist())
                    for lab in range(1, labels.max() + 1)}
        return sig(out_np) == sig(out_nb)
    return np.allclose(out_np, out_nb, atol=1e-10)


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    if NUMBA_IMPLS is None:
        raise SystemExit("numba backend unavailable (LESIONKIT_NO_NUMBA set?)")

    rng = np.random.default_rng(0)
    rows = []
    for name, payload in workloads(rng):
        out_np = NUMPY_IMPLS[name](*payload)
        out_nb = NUMBA_IMPLS[name](*payload)  # also triggers compilation
        ok = agreement(name, out_np, out_nb)
        t_np = timeit(NUMPY_IMPLS[name], payload, args.repeat)
        t_nb = timeit(NUMBA_IMPLS[name], payload, args.repeat)
        rows.append((name, t_np, t_nb, t_np / t_nb, ok))

    print(f"{'kernel':<22} {'numpy':>10} {'numba':>10} {'speedup':>8}  agree")
    for name, t_np, t_nb, speedup, ok in rows:
        print(f"{name:<22} {t_np * 1e3:>8.2f}ms {t_nb * 1e3:>8.2f}ms "
              f"{speedup:>7.1f}x  {'yes' if ok else 'NO'}")
    if not all(r[4] for r in rows):
        raise SystemExit("backend disagreement detected")


if __name__ == "__main__":
    main()
