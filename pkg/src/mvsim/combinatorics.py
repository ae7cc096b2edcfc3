"""Tuples over {1..n} in which no value occurs exactly once.

The exact count sums over set partitions of the p positions into blocks of
size >= 2: a partition with k blocks contributes n (n-1) ... (n-k+1) tuples,
and the number of such partitions is the associated Stirling number
S2(p, k) = k S2(p-1, k) + (p-1) S2(p-2, k-1).
"""

from __future__ import annotations

import itertools
import math
from collections import Counter
from functools import lru_cache

import numpy as np

ENUMERATION_LIMIT = 10**7


class TooLarge(ValueError):
    pass


def _check(n: int, p: int, p_max: int = 10) -> None:
    if int(n) != n or n < 1:
        raise ValueError(f"set size must be a positive integer, got {n!r}")
    if int(p) != p or not 2 <= p <= p_max:
        raise ValueError(f"tuple length must be an integer in [2, {p_max}], got {p!r}")


@lru_cache(maxsize=None)
def partitions_min2(p: int, k: int) -> int:
    """Number of partitions of a p-set into k blocks, each of size at least 2."""
    if p == 0 and k == 0:
        return 1
    if p <= 0 or k <= 0:
        return 0
    return k * partitions_min2(p - 1, k) + (p - 1) * partitions_min2(p - 2, k - 1)


def falling(n: int, k: int) -> int:
    out = 1
    for i in range(k):
        out *= n - i
    return out


def count_no_unique(set_size: int, p: int) -> int:
    _check(set_size, p)
    return sum(partitions_min2(p, k) * falling(set_size, k) for k in range(1, p // 2 + 1))


def has_no_unique(tup) -> bool:
    return all(c >= 2 for c in Counter(tup).values())


def enumerate_no_unique(set_size: int, p: int) -> list[tuple[int, ...]]:
    """Brute force over all set_size**p tuples (1-based values), lexicographic order."""
    _check(set_size, p)
    if set_size ** p > ENUMERATION_LIMIT:
        raise TooLarge(f"{set_size}^{p} tuples exceeds the enumeration limit {ENUMERATION_LIMIT}")
    values = range(1, set_size + 1)
    return [t for t in itertools.product(values, repeat=p) if has_no_unique(t)]


@lru_cache(maxsize=None)
def bound_constant(p: int) -> int:
    """c_p from the inductive proof, made uniform in the set size.

    c_2 = c_3 = 1 and c_{p+2} = 1 + sum_{j=0}^{p-2} C(p+2, j+2) c_{p-j}; the
    proof's factors |I|^{-p/2} and (|I|-1)^{-j/2} are bounded by 1.
    """
    _check(1, p)
    if p in (2, 3):
        return 1
    q = p - 2
    return 1 + sum(math.comb(q + 2, j + 2) * bound_constant(q - j) for j in range(0, q - 1))


def cardinality_bound(set_size: int, p: int) -> int:
    return bound_constant(p) * set_size ** (p // 2)


def growth_exponent(p: int, set_sizes=(16, 32, 64)) -> float:
    """Least-squares slope of log(count) against log(set_size)."""
    if int(p) != p or not 2 <= p <= 8:
        raise ValueError("growth_exponent supports 2 <= p <= 8")
    n = np.asarray(set_sizes, dtype=np.float64)
    c = np.array([count_no_unique(int(v), p) for v in set_sizes], dtype=np.float64)
    slope, _ = np.polyfit(np.log(n), np.log(c), 1)
    return float(slope)


def count_table(ns, ps) -> list[tuple[int, int, int, int]]:
    """Rows (n, p, count, bound) for the CSV report."""
    return [(n, p, count_no_unique(n, p), cardinality_bound(n, p)) for n in ns for p in ps]


def write_count_csv(path, rows) -> None:
    with open(path, "w") as fh:
        fh.write("n,p,count,bound\n")
        for n, p, c, b in rows:
            fh.write(f"{n},{p},{c},{b}\n")
