"""Compare the compiled and numpy tree kernels on forest training and batch prediction.

    python3 benchmarks/bench_kernels.py [--rows 300] [--trees 30] [--repeat 3]

Both backends must produce identical models and predictions; the script
checks that before reporting timings.
"""

import argparse
import time

import numpy as np

from clue import _kernels
from clue.corpus import FeatureTable
from clue.forest import ForestConfig, train_forest


def best_of(fn, repeat):
    times = []
    result = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        result = fn()
        times.append(time.perf_counter() - t0)
    return min(times), result


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--rows", type=int, default=300)
    ap.add_argument("--trees", type=int, default=30)
    ap.add_argument("--predict-rows", type=int, default=163840, help="default matches one exact Shapley pass")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    if _kernels.compiled_kernels is None:
        raise SystemExit("compiled kernels are not built; run `pip install -e . --no-build-isolation`")

    rng = np.random.default_rng(0)
    X = rng.uniform(size=(args.rows, 14))
    y = np.clip(0.6 * X[:, 0] + 0.3 * X[:, 5] * X[:, 9] + 0.05 * rng.standard_normal(args.rows), 0, 1)
    table = FeatureTable(X, y)
    config = ForestConfig(n_trees=args.trees)
    Xq = rng.uniform(size=(args.predict_rows, 14))

    results = {}
    for backend in ("cython", "python"):
        t_fit, model = best_of(lambda: train_forest(table, config, seed=0, backend=backend), args.repeat)
        t_pred, pred = best_of(lambda: model.predict_batch(Xq, backend=backend), args.repeat)
        results[backend] = (t_fit, t_pred, model.dumps(), pred)

    same_model = results["cython"][2] == results["python"][2]
    same_pred = np.array_equal(results["cython"][3], results["python"][3])
    print(f"rows={args.rows} trees={args.trees} predict_rows={args.predict_rows}")
    print(f"{'backend':<8} {'train s':>10} {'predict s':>10}")
    for backend, (t_fit, t_pred, _, _) in results.items():
        print(f"{backend:<8} {t_fit:>10.4f} {t_pred:>10.4f}")
    c, p = results["cython"], results["python"]
    print(f"speedup  {p[0] / c[0]:>10.1f}x {p[1] / c[1]:>10.1f}x")
    print(f"identical models: {same_model}, identical predictions: {same_pred}")
    if not (same_model and same_pred):
        raise SystemExit(1)


if __name__ == "__main__":
    main()
