"""Timing comparison of the numba kernels against their numpy fallbacks.

Run: python3 benchmarks/bench_kernels.py [--rows N] [--cols F] [--trees M]
The numba path warms up once before timing so JIT compilation is excluded.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from retrosmc._kernels import (
    N_BINS,
    USE_NUMBA,
    build_tree,
    build_tree_numpy,
    forest_predict,
    forest_predict_numpy,
)
from retrosmc.surrogate import fit_gbm


def time_it(fn, repeats=5):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--rows", type=int, default=2000)
    ap.add_argument("--cols", type=int, default=400)
    ap.add_argument("--trees", type=int, default=100)
    ap.add_argument("--depth", type=int, default=4)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    X = rng.integers(0, 8, size=(args.rows, args.cols))
    w = rng.normal(size=args.cols) * (rng.random(args.cols) < 0.2)
    y = np.clip(0.5 + 0.03 * (X @ w), 0, 1)
    xb = np.ascontiguousarray(np.clip(X, 0, N_BINS - 1), dtype=np.uint8)
    res = y - y.mean()
    out = np.empty(args.rows)

    print(f"numba active: {USE_NUMBA}")
    print(f"data: {args.rows} rows x {args.cols} cols, depth {args.depth}")

    def tree_numba():
        build_tree(xb, res, np.arange(args.rows, dtype=np.int64),
                   args.depth, 1, out)

    def tree_numpy():
        build_tree_numpy(xb, res, np.arange(args.rows, dtype=np.int64),
                         args.depth, 1, out)

    if USE_NUMBA:
        tree_numba()  # compile
        t_nb = time_it(tree_numba)
        print(f"build_tree   numba: {t_nb * 1e3:8.2f} ms")
    t_np = time_it(tree_numpy)
    print(f"build_tree   numpy: {t_np * 1e3:8.2f} ms"
          + (f"   (x{t_np / t_nb:.1f})" if USE_NUMBA else ""))

    model = fit_gbm(X, y, n_trees=args.trees, max_depth=args.depth)
    xq = np.ascontiguousarray(X[:, model.columns], dtype=np.int64)
    pargs = (xq, model.feat, model.thr, model.left, model.right, model.val,
             model.roots, model.base, model.nu)

    if USE_NUMBA:
        forest_predict(*pargs)  # compile
        t_nb = time_it(lambda: forest_predict(*pargs))
        print(f"forest_pred  numba: {t_nb * 1e3:8.2f} ms")
    t_np = time_it(lambda: forest_predict_numpy(*pargs))
    print(f"forest_pred  numpy: {t_np * 1e3:8.2f} ms"
          + (f"   (x{t_np / t_nb:.1f})" if USE_NUMBA else ""))

    t_fit = time_it(
        lambda: fit_gbm(X, y, n_trees=args.trees, max_depth=args.depth),
        repeats=2,
    )
    print(f"full fit ({args.trees} trees): {t_fit:8.3f} s on the active path")


if __name__ == "__main__":
    main()
