"""Record buffer that stays in memory until it outgrows its share."""

from __future__ import annotations

import numpy as np

from .device import BlockDevice
from .keys import as_key, sort_records
from .sequence import ExternalSequence
from .sort import external_sort


class SpillBuffer:
    def __init__(self, device: BlockDevice, dtype, capacity_bytes: int, tag: str = "spill"):
        self.device = device
        self.dtype = np.dtype(dtype)
        self.capacity = max(1, capacity_bytes // self.dtype.itemsize)
        self.capacity_bytes = capacity_bytes
        self.tag = tag
        self._parts: list[np.ndarray] = []
        self._count = 0
        self._seq: ExternalSequence | None = None
        self.spilled_bytes = 0

    def __len__(self) -> int:
        return self._count

    @property
    def spilled(self) -> bool:
        return self._seq is not None

    def append(self, records: np.ndarray) -> None:
        if not len(records):
            return
        self._count += len(records)
        if self._seq is not None:
            self._seq.append(records)
            self.spilled_bytes += records.nbytes
            return
        self._parts.append(records)
        if self._count > self.capacity:
            self.spill()

    def spill(self) -> None:
        """Move the buffered records to disk; later appends go straight there."""
        if self._seq is not None:
            return
        self._seq = ExternalSequence.create(self.device, self.dtype, self.tag)
        for p in self._parts:
            self._seq.append(p)
            self.spilled_bytes += p.nbytes
        self._parts = []

    def in_memory(self) -> np.ndarray:
        if not self._parts:
            return np.zeros(0, dtype=self.dtype)
        return self._parts[0] if len(self._parts) == 1 else np.concatenate(self._parts)

    def sorted_chunks(self, key, max_records: int | None = None):
        """Yield the contents sorted by ``key`` and empty the buffer."""
        key = as_key(key)
        if self._seq is None:
            data = sort_records(self.in_memory(), key)
            self.clear()
            if len(data):
                yield data
            return
        seq = self._seq.finish()
        self._seq = None
        self._parts = []
        self._count = 0
        out = external_sort(seq, key, budget_bytes=self.capacity_bytes, tag=self.tag + "-sorted",
                            delete_input=True)
        try:
            yield from out.chunks(max_records or self.capacity)
        finally:
            out.delete()

    def clear(self) -> None:
        self._parts = []
        self._count = 0
        if self._seq is not None:
            self._seq.delete()
            self._seq = None
