"""Brute-force oracles and result-file verification."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Sequence

import numpy as np

from .. import dataset, fptree, knn

MAX_FP_TRANSACTIONS = 1000
MAX_FP_ITEMS = 20
MAX_KNN_PAIRS = 10**6


class TooLargeForOracle(ValueError):
    pass


def brute_force_itemsets(transactions: Sequence[Sequence[int]], n_items: int,
                         min_count: int) -> list[tuple[tuple[int, ...], int]]:
    """Count every non-empty subset of every transaction; keep those with enough support.

    Guarded to |T| <= 1000 and n_items <= 20, which bounds the work at
    1000 * 2**20 subset visits.
    """
    if len(transactions) > MAX_FP_TRANSACTIONS or n_items > MAX_FP_ITEMS:
        raise TooLargeForOracle(
            f"{len(transactions)} transactions over {n_items} items exceeds the oracle guard")
    support: Counter = Counter()
    for t in transactions:
        items = sorted(set(t))
        for size in range(1, len(items) + 1):
            support.update(combinations(items, size))
    floor = max(1, min_count)
    return sorted((s, c) for s, c in support.items() if c >= floor)


def brute_force_knn(tests: np.ndarray, train: np.ndarray, k: int,
                    test_ids: Sequence[int] | None = None
                    ) -> dict[int, list[tuple[int, float]]]:
    """Exhaustive pairwise scan with plain Python arithmetic, independent of the kernels."""
    if len(tests) * len(train) > MAX_KNN_PAIRS:
        raise TooLargeForOracle(f"{len(tests)} x {len(train)} pairs exceeds the oracle guard")
    ids = range(len(tests)) if test_ids is None else test_ids
    train_rows = train.tolist()
    out = {}
    for tid, a in zip(ids, tests.tolist()):
        cands = []
        for j, b in enumerate(train_rows):
            s = 0.0
            for x, y in zip(a, b):
                d = x - y
                s += d * d
            cands.append((math.sqrt(s), j))
        cands.sort()
        out[int(tid)] = [(j, d) for d, j in cands[:k]]
    return out


@dataclass
class VerifyReport:
    passed: bool
    checked: int
    problems: list[str] = field(default_factory=list)

    def summary(self) -> str:
        head = f"{'PASS' if self.passed else 'FAIL'}: {self.checked} entries checked"
        return "\n".join([head] + self.problems)


def compare_itemsets(got, expected, limit: int = 20) -> VerifyReport:
    got_d, exp_d = dict(got), dict(expected)
    problems = []
    for s in sorted(set(exp_d) | set(got_d)):
        label = ",".join(map(str, s))
        if s not in got_d:
            problems.append(f"missing itemset {{{label}}} (support {exp_d[s]})")
        elif s not in exp_d:
            problems.append(f"unexpected itemset {{{label}}} (support {got_d[s]})")
        elif got_d[s] != exp_d[s]:
            problems.append(f"itemset {{{label}}}: support {got_d[s]}, expected {exp_d[s]}")
    return VerifyReport(not problems, len(exp_d), problems[:limit])


def compare_neighbors(got, expected, limit: int = 20) -> VerifyReport:
    problems = []
    for tid in sorted(set(expected) | set(got)):
        if tid not in got:
            problems.append(f"test {tid}: missing")
        elif tid not in expected:
            problems.append(f"test {tid}: not in dataset")
        elif got[tid] != expected[tid]:
            problems.append(f"test {tid}: neighbours {got[tid]}, expected {expected[tid]}")
    return VerifyReport(not problems, len(expected), problems[:limit])


def expected_fp(data_dir: Path, theta: float):
    f = dataset.DatasetFile(Path(data_dir) / "transactions.ftmd")
    trans = f.read_range(0, f.n_records)
    return brute_force_itemsets(trans, f.n_items, fptree.min_support_count(theta, len(trans)))


def expected_knn(data_dir: Path, k: int):
    train = dataset.DatasetFile(Path(data_dir) / "train.ftmd")
    test = dataset.DatasetFile(Path(data_dir) / "test.ftmd")
    return brute_force_knn(test.read_points(0, test.n_records),
                           train.read_points(0, train.n_records), k)


def verify(result: str | Path, data_dir: str | Path, algo: str, theta: float | None = None,
           k: int | None = None) -> VerifyReport:
    """Check a result file against the brute-force oracle for its dataset."""
    text = Path(result).read_text()
    if algo == "fpgrowth":
        return compare_itemsets(fptree.parse_itemsets(text), expected_fp(Path(data_dir), theta))
    return compare_neighbors(knn.parse_neighbors(text), expected_knn(Path(data_dir), k))
