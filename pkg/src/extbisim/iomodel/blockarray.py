"""Growable integer array on the device with a two-block cache.

Used for per-depth arrays (counts, label stacks) whose accesses stay within a
window around the current depth, so two resident blocks absorb almost every
access.
"""

from __future__ import annotations

from collections import OrderedDict

import numpy as np

from .device import BlockDevice


class BlockCachedArray:
    def __init__(self, device: BlockDevice, dtype=np.uint64, *, cached_blocks: int = 2,
                 tag: str = "array"):
        self.device = device
        self.dtype = np.dtype(dtype)
        self.per_block = device.block_size // self.dtype.itemsize
        if self.per_block * self.dtype.itemsize != device.block_size:
            raise ValueError("item width must divide the block size")
        self.path = device.temp_path(tag)
        self._fh = device.open(self.path, "w+b")
        self._cached_blocks = cached_blocks
        self._cache: OrderedDict[int, list] = OrderedDict()
        self._on_disk = 0
        self._share = device.budget.reserve(tag, cached_blocks * device.block_size)
        self._tag = tag
        self.misses = 0

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None
            self.device.budget.release(self._tag)
            self._cache.clear()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _block(self, b: int) -> np.ndarray:
        hit = self._cache.get(b)
        if hit is not None:
            self._cache.move_to_end(b)
            return hit[0]
        self.misses += 1
        if len(self._cache) >= self._cached_blocks:
            old, (arr, dirty) = self._cache.popitem(last=False)
            if dirty:
                self.device.pwrite(self._fh, arr.tobytes(), old * self.device.block_size, self.path)
                self._on_disk = max(self._on_disk, old + 1)
        if b < self._on_disk:
            raw = self.device.pread(self._fh, self.device.block_size, b * self.device.block_size,
                                    self.path)
            arr = np.frombuffer(bytearray(raw.ljust(self.device.block_size, b"\0")), dtype=self.dtype)
        else:
            arr = np.zeros(self.per_block, dtype=self.dtype)
        self._cache[b] = [arr, False]
        return arr

    def get_range(self, lo: int, hi: int) -> np.ndarray:
        """Copy of entries ``[lo, hi)``; unwritten entries read as zero."""
        out = np.empty(max(0, hi - lo), dtype=self.dtype)
        i = lo
        while i < hi:
            b, off = divmod(i, self.per_block)
            take = min(hi - i, self.per_block - off)
            out[i - lo:i - lo + take] = self._block(b)[off:off + take]
            i += take
        return out

    def set_range(self, lo: int, values: np.ndarray) -> None:
        i = lo
        hi = lo + len(values)
        while i < hi:
            b, off = divmod(i, self.per_block)
            take = min(hi - i, self.per_block - off)
            self._block(b)[off:off + take] = values[i - lo:i - lo + take]
            self._cache[b][1] = True
            i += take

    def __getitem__(self, i: int) -> int:
        b, off = divmod(i, self.per_block)
        return int(self._block(b)[off])

    def __setitem__(self, i: int, value: int) -> None:
        b, off = divmod(i, self.per_block)
        self._block(b)[off] = value
        self._cache[b][1] = True
