"""Compiled inner loops: the sequential part of a phase-1 batch and hash mixing.

Everything else is vectorized with numpy; these loops carry a true
dependency from each node to the nodes processed before it.
"""

import numpy as np
from numba import njit

FNV_OFFSET = np.uint64(0xCBF29CE484222325)
FNV_PRIME = np.uint64(0x100000001B3)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S32 = np.uint64(32)


@njit(cache=True)
def mix64(x):
    x = (x ^ (x >> _S30)) * _M1
    x = (x ^ (x >> _S27)) * _M2
    return x ^ (x >> _S31)


@njit(cache=True)
def _fold(h, x):
    h = (h ^ x) * FNV_PRIME
    return h ^ (h >> _S32)


@njit(cache=True)
def combine_sorted(label, hashes, n):
    """Hash of ``label`` and the first ``n`` entries of sorted ``hashes``, doubles skipped."""
    h = _fold(FNV_OFFSET, np.uint64(label))
    for i in range(n):
        if i > 0 and hashes[i] == hashes[i - 1]:
            continue
        h = _fold(h, hashes[i])
    return mix64(h)


@njit(cache=True)
def phase1_batch(labels, msg_ptr, msg_rank, msg_hash, in_ptr, in_child, hashed, scratch):
    """Ranks (and hashes) of one batch of nodes in id order.

    Node ``i`` receives queue messages ``msg_ptr[i]:msg_ptr[i+1]`` and has the
    in-batch children ``in_child[in_ptr[i]:in_ptr[i+1]]`` (positions < i).
    """
    n = len(labels)
    rank = np.zeros(n, dtype=np.uint32)
    hsh = np.zeros(n, dtype=np.uint64)
    for i in range(n):
        r = 0
        cnt = 0
        for j in range(msg_ptr[i], msg_ptr[i + 1]):
            v = msg_rank[j] + 1
            if v > r:
                r = v
            if hashed:
                scratch[cnt] = msg_hash[j]
                cnt += 1
        for j in range(in_ptr[i], in_ptr[i + 1]):
            c = in_child[j]
            v = rank[c] + 1
            if v > r:
                r = v
            if hashed:
                scratch[cnt] = hsh[c]
                cnt += 1
        rank[i] = r
        if hashed:
            part = np.sort(scratch[:cnt])
            hsh[i] = combine_sorted(labels[i], part, cnt)
    return rank, hsh


@njit(cache=True)
def mix64_array(values):
    out = np.empty(len(values), dtype=np.uint64)
    for i in range(len(values)):
        out[i] = mix64(values[i])
    return out
