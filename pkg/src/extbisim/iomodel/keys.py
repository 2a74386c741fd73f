"""Lexicographic keys over fields of numpy structured record arrays."""

from __future__ import annotations

from typing import Sequence

import numpy as np

Key = tuple[str, ...]


def as_key(key: str | Sequence[str]) -> Key:
    return (key,) if isinstance(key, str) else tuple(key)


def sort_order(arr: np.ndarray, key: Key) -> np.ndarray:
    """Stable permutation sorting ``arr`` by the fields of ``key``."""
    if len(key) == 1:
        return np.argsort(arr[key[0]], kind="stable")
    return np.lexsort(tuple(arr[f] for f in reversed(key)))


def sort_records(arr: np.ndarray, key: Key) -> np.ndarray:
    if len(arr) < 2:
        return arr
    return arr[sort_order(arr, key)]


def key_of(record, key: Key) -> tuple:
    return tuple(int(record[f]) for f in key)


def searchsorted(arr: np.ndarray, key: Key, bound: tuple, side: str = "left") -> int:
    """Insertion point of ``bound`` in ``arr`` sorted lexicographically by ``key``."""
    lo, hi = 0, len(arr)
    for i, f in enumerate(key):
        col = arr[f][lo:hi]
        v = bound[i]
        if i == len(key) - 1:
            return lo + int(np.searchsorted(col, v, side=side))
        a = lo + int(np.searchsorted(col, v, side="left"))
        b = lo + int(np.searchsorted(col, v, side="right"))
        if a == b:
            return a
        lo, hi = a, b
    return lo


def less_mask(arr: np.ndarray, key: Key, bound: tuple, inclusive: bool = False) -> np.ndarray:
    """Boolean mask of records lexicographically below (or equal to) ``bound``."""
    result = np.zeros(len(arr), dtype=bool)
    equal = np.ones(len(arr), dtype=bool)
    for f, v in zip(key, bound):
        col = arr[f]
        result |= equal & (col < v)
        equal &= col == v
    if inclusive:
        result |= equal
    return result


def changes(arr: np.ndarray, key: Key) -> np.ndarray:
    """``out[i]`` is True where record i differs in ``key`` from record i-1 (``out[0]`` True)."""
    out = np.ones(len(arr), dtype=bool)
    if len(arr) > 1:
        diff = np.zeros(len(arr) - 1, dtype=bool)
        for f in key:
            col = arr[f]
            diff |= col[1:] != col[:-1]
        out[1:] = diff
    return out
