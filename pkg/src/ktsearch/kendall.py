"""Kendall-Tau distance between rank lists.

A rank list is a permutation of ``0..n-1``; ``a[i]`` is the item ranked at
position ``i``.  Distances are kept as integer discordant-pair counts and only
turned into floats by :func:`normalize`.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np
from numba import njit


class RankListError(ValueError):
    """Input is not a permutation of 0..n-1."""


class LengthMismatchError(ValueError):
    """Two rank lists of different length were compared."""


def max_pairs(n: int) -> int:
    return n * (n - 1) // 2


def as_ranklist(items: Sequence[int]) -> np.ndarray:
    """Validate ``items`` as a permutation and return it as an int16 array."""
    arr = np.asarray(items)
    if arr.ndim != 1:
        raise RankListError("rank list must be one-dimensional")
    n = arr.shape[0]
    if n < 2:
        raise RankListError(f"rank list needs at least 2 items, got {n}")
    if arr.dtype.kind not in "iu":
        raise RankListError("rank list items must be integers")
    if n > np.iinfo(np.int16).max:
        raise RankListError(f"rank list too long ({n})")
    if arr.min() < 0 or arr.max() >= n or np.unique(arr).shape[0] != n:
        raise RankListError(f"not a permutation of 0..{n - 1}: {arr.tolist()}")
    return arr.astype(np.int16)


def _check_pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = as_ranklist(a)
    b = as_ranklist(b)
    if a.shape[0] != b.shape[0]:
        raise LengthMismatchError(f"lengths differ: {a.shape[0]} vs {b.shape[0]}")
    return a, b


@njit(cache=True, nogil=True)
def _count_inversions(seq, buf):
    # bottom-up merge sort; sorts seq in place
    n = seq.shape[0]
    inv = 0
    width = 1
    while width < n:
        lo = 0
        while lo < n - width:
            mid = lo + width
            hi = min(lo + 2 * width, n)
            i = lo
            j = mid
            k = lo
            while i < mid and j < hi:
                if seq[i] <= seq[j]:
                    buf[k] = seq[i]
                    i += 1
                else:
                    buf[k] = seq[j]
                    inv += mid - i
                    j += 1
                k += 1
            while i < mid:
                buf[k] = seq[i]
                i += 1
                k += 1
            while j < hi:
                buf[k] = seq[j]
                j += 1
                k += 1
            for t in range(lo, hi):
                seq[t] = buf[t]
            lo += 2 * width
        width *= 2
    return inv


@njit(cache=True, nogil=True)
def _kt_raw(pos_a, b, seq, buf):
    # pos_a is the inverse permutation of a; relabel b into a's positions
    for i in range(b.shape[0]):
        seq[i] = pos_a[b[i]]
    return _count_inversions(seq, buf)


@njit(cache=True, nogil=True)
def _inverse(a, out):
    for i in range(a.shape[0]):
        out[a[i]] = i


@njit(cache=True, nogil=True)
def _kt_many(a, others):
    n = a.shape[0]
    pos = np.empty(n, np.int32)
    _inverse(a, pos)
    seq = np.empty(n, np.int32)
    buf = np.empty(n, np.int32)
    out = np.empty(others.shape[0], np.int32)
    for r in range(others.shape[0]):
        out[r] = _kt_raw(pos, others[r], seq, buf)
    return out


def kt_distance(a: Sequence[int], b: Sequence[int]) -> int:
    """Number of item pairs ordered differently by ``a`` and ``b``.

    O(n log n): ``b`` is relabelled through the inverse of ``a`` and the
    inversions of the result are counted with a merge sort.

    >>> kt_distance([0, 1, 2, 3], [2, 3, 0, 1])
    4
    """
    a, b = _check_pair(a, b)
    return int(_kt_many(a, b[None, :])[0])


def kt_distance_many(a: Sequence[int], others: np.ndarray) -> np.ndarray:
    """Distances from ``a`` to every row of ``others`` (no validation of rows)."""
    a = as_ranklist(a)
    others = np.ascontiguousarray(others, dtype=np.int16)
    if others.ndim != 2 or others.shape[1] != a.shape[0]:
        raise LengthMismatchError(
            f"expected rows of length {a.shape[0]}, got shape {others.shape}"
        )
    return _kt_many(a, others)


def discordant_pairs(a: Sequence[int], b: Sequence[int]) -> list[tuple[int, int]]:
    """Item pairs ``(x, y)`` with ``x`` before ``y`` in ``a`` but after it in ``b``."""
    a, b = _check_pair(a, b)
    pos_b = {int(item): i for i, item in enumerate(b)}
    out = []
    n = len(a)
    for i in range(n):
        for j in range(i + 1, n):
            x, y = int(a[i]), int(a[j])
            if pos_b[x] > pos_b[y]:
                out.append((x, y))
    return out


def kt_distance_oracle(a: Sequence[int], b: Sequence[int]) -> int:
    """Quadratic pair-by-pair reference for :func:`kt_distance`."""
    return len(discordant_pairs(a, b))


def kt_distance_oracle_many(a: Sequence[int], others: np.ndarray) -> np.ndarray:
    """Vectorised pair enumeration: distances from ``a`` to every row of ``others``."""
    a = as_ranklist(a)
    others = np.asarray(others)
    pos = np.empty(a.shape[0], dtype=np.int64)
    pos[a] = np.arange(a.shape[0])
    seq = pos[others]
    n = a.shape[0]
    total = np.zeros(others.shape[0], dtype=np.int64)
    for i in range(n - 1):
        total += (seq[:, i : i + 1] > seq[:, i + 1 :]).sum(axis=1)
    return total


def normalize(d: int, n: int) -> float:
    """Map a raw distance on length-``n`` lists into [0, 1]."""
    if n < 2:
        raise ValueError(f"normalization needs n >= 2, got {n}")
    total = max_pairs(n)
    if not 0 <= d <= total:
        raise ValueError(f"raw distance {d} outside [0, {total}] for n={n}")
    return d / total
