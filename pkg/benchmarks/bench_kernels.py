"""Compare the compiled kernels with the pure-Python fallback.

    python benchmarks/bench_kernels.py [--repeat 5]

Both backends run the same inputs; outputs are checked for equality before
timings are reported.
"""

import argparse
import timeit

import numpy as np

from ftmine import _pykernels

try:
    from ftmine import _ckernels
except ImportError:
    _ckernels = None


def _transactions(rng, n=5000, n_items=200):
    return [sorted(rng.choice(n_items, size=int(rng.integers(3, 15)), replace=False).tolist())
            for _ in range(n)], n_items


def _tree_build(mod, trans, n_items):
    child, items, counts, parents = {}, [-1], [0], [-1]
    for t in trans:
        mod.tree_insert(t, 1, child, items, counts, parents, n_items)
    return items, counts, parents


def _knn(mod, tests, train, k):
    qd = np.full((len(tests), k), np.inf)
    qi = np.full((len(tests), k), -1, dtype=np.int64)
    qn = np.zeros(len(tests), dtype=np.int64)
    mod.knn_block(tests, train, np.arange(len(train), dtype=np.int64), qd, qi, qn, k)
    return qd, qi


def cases(rng):
    trans, n_items = _transactions(rng)
    blob = _pykernels.encode_transactions(trans)
    tests = rng.uniform(-1, 1, size=(100, 8))
    train = rng.uniform(-1, 1, size=(1000, 8))
    return {
        "encode_transactions": lambda m: m.encode_transactions(trans),
        "decode_transactions": lambda m: m.decode_transactions(blob),
        "count_items": lambda m: m.count_items(trans, n_items),
        "tree_insert": lambda m: _tree_build(m, trans, n_items),
        "knn_block": lambda m: _knn(m, tests, train, 5),
    }


def _same(a, b):
    if isinstance(a, tuple) and isinstance(a[0], np.ndarray):
        return all(np.array_equal(x, y) for x, y in zip(a, b))
    if isinstance(a, list) and a and isinstance(a[0], (list, tuple)):
        return [tuple(x) for x in a] == [tuple(y) for y in b]
    return a == b


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    backends = {"python": _pykernels}
    if _ckernels is not None:
        backends["cython"] = _ckernels
    else:
        print("compiled extension not built; timing the pure backend only")

    print(f"{'kernel':<22}" + "".join(f"{b:>12}" for b in backends) + f"{'speedup':>10}")
    for name, fn in cases(np.random.default_rng(args.seed)).items():
        outs = {b: fn(m) for b, m in backends.items()}
        if len(outs) == 2 and not _same(outs["python"], outs["cython"]):
            raise SystemExit(f"{name}: backends disagree")
        times = {b: min(timeit.repeat(lambda m=m: fn(m), number=1, repeat=args.repeat))
                 for b, m in backends.items()}
        row = f"{name:<22}" + "".join(f"{t * 1e3:>10.2f}ms" for t in times.values())
        if "cython" in times:
            row += f"{times['python'] / times['cython']:>9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
