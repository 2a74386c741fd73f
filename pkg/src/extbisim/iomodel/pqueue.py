"""External priority queue for time-forward processing.

A run-based merge queue: inserts collect in an in-memory buffer that is sorted
and written out as a run whenever it outgrows its share of memory. The
smallest records are pulled into a small sorted *head* by merging the run
cursors with the buffer. Every record is written and read at most once per
consolidation, which keeps k operations within O(Sort(k)) block transfers.
"""

from __future__ import annotations

import numpy as np

from .device import BlockDevice
from .keys import Key, as_key, key_of, less_mask, searchsorted, sort_records
from .sequence import ExternalSequence
from .sort import merge_step


class EmptyQueueError(IndexError):
    pass


class _Run:
    """Sorted spill run read through a one-buffer cursor, opened lazily."""

    def __init__(self, seq: ExternalSequence, buffer_bytes: int):
        self.seq = seq
        self.buffer_bytes = buffer_bytes
        self.reader = None
        self.chunk = np.zeros(0, dtype=seq.dtype)
        self.left = len(seq)

    def load(self) -> bool:
        if len(self.chunk):
            return True
        if self.left == 0:
            return False
        if self.reader is None:
            self.reader = self.seq.reader(self.buffer_bytes)
        self.chunk = self.reader.next_chunk()
        return len(self.chunk) > 0

    def advance(self, n: int) -> None:
        self.chunk = self.chunk[n:]
        self.left -= n

    def drop(self) -> None:
        if self.reader is not None:
            self.reader.close()
        self.seq.delete()


class ExternalPriorityQueue:
    """Min-queue over structured records ordered by ``key`` fields.

    ``key`` names a prefix of the record fields; the remaining fields form the
    payload. Ties are broken by insertion order.
    """

    def __init__(self, device: BlockDevice, dtype, key, *, budget_bytes: int | None = None,
                 name: str = "pq"):
        self.device = device
        self.dtype = np.dtype(dtype)
        self.key: Key = as_key(key)
        if self.dtype.names[: len(self.key)] != self.key:
            raise ValueError(f"key {self.key} must be a prefix of fields {self.dtype.names}")
        self._payload_fields = self.dtype.names[len(self.key):]
        B = device.block_size
        if budget_bytes is None:
            budget_bytes = device.budget.free // 4
        budget_bytes = max(budget_bytes, 3 * B)
        self.name = name
        self.budget_bytes = device.budget.reserve(name, budget_bytes)
        self._reserved = name
        w = self.dtype.itemsize
        # half the share buffers fresh inserts; a quarter holds run cursors; the rest the head
        self.capacity = max(1, (budget_bytes // 2) // w)
        self.max_runs = max(2, (budget_bytes // 4) // B)
        self._run_buffer = B
        self._small_pull = max(1, B // w)
        self._head = np.zeros(0, dtype=self.dtype)
        self._hpos = 0
        self._sorted = np.zeros(0, dtype=self.dtype)
        self._parts: list[np.ndarray] = []
        self._scalars: list[tuple] = []
        self._buffered = 0
        self._runs: list[_Run] = []
        self._size = 0
        self.spilled_records = 0
        self.consolidations = 0

    def __len__(self) -> int:
        return self._size

    def close(self) -> None:
        for r in self._runs:
            r.drop()
        self._runs = []
        if self._reserved:
            self.device.budget.release(self._reserved)
            self._reserved = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # -- insertion --------------------------------------------------------

    def _head_bound(self):
        if self._hpos < len(self._head):
            return key_of(self._head[-1], self.key)
        return None

    def insert_many(self, records: np.ndarray) -> None:
        n = len(records)
        if n == 0:
            return
        if records.dtype != self.dtype:
            records = records.astype(self.dtype)
        self._size += n
        bound = self._head_bound()
        if bound is not None:
            into_head = less_mask(records, self.key, bound)
            if into_head.any():
                self._head = sort_records(
                    np.concatenate([self._head[self._hpos:], records[into_head]]), self.key)
                self._hpos = 0
                records = records[~into_head]
        if len(records):
            self._parts.append(records)
            self._buffered += len(records)
            if self._buffered > self.capacity:
                self._spill()

    def insert(self, key, payload=()) -> None:
        k = key if isinstance(key, tuple) else (key,)
        p = payload if isinstance(payload, tuple) else (payload,)
        rec = k + p
        if len(rec) != len(self.dtype.names):
            raise ValueError(f"record {rec} does not match fields {self.dtype.names}")
        bound = self._head_bound()
        if bound is not None and k < bound:
            self.insert_many(np.array([rec], dtype=self.dtype))
            return
        self._scalars.append(rec)
        self._size += 1
        self._buffered += 1
        if self._buffered > self.capacity:
            self._spill()

    def _collect(self) -> np.ndarray:
        """Merge pending inserts into the sorted buffer (insertion order breaks ties)."""
        if self._parts or self._scalars:
            parts = [self._sorted] + self._parts
            if self._scalars:
                parts.append(np.array(self._scalars, dtype=self.dtype))
            self._sorted = sort_records(np.concatenate(parts), self.key)
            self._parts = []
            self._scalars = []
        return self._sorted

    def _spill(self) -> None:
        buf = self._collect()
        run = ExternalSequence.create(self.device, self.dtype, self.name + "-run")
        run.append(buf)
        self._runs.append(_Run(run.finish(), self._run_buffer))
        self.spilled_records += len(buf)
        self._sorted = np.zeros(0, dtype=self.dtype)
        self._buffered = 0
        if len(self._runs) > self.max_runs:
            self._consolidate()

    def _consolidate(self) -> None:
        """Merge all spill runs into one so the cursors fit in the share."""
        self.consolidations += 1
        out = ExternalSequence.create(self.device, self.dtype, self.name + "-run")
        runs = self._runs
        while True:
            live = [r for r in runs if r.load()]
            if not live:
                break
            merged, cuts = merge_step([r.chunk for r in live], self.key)
            out.append(merged)
            for r, cut in zip(live, cuts):
                r.advance(cut)
        for r in runs:
            r.drop()
        self._runs = [_Run(out.finish(), self._run_buffer)]

    # -- extraction -------------------------------------------------------

    def _refill(self, pull: int) -> bool:
        """Replace the exhausted head with the next smallest records."""
        sources = [r for r in self._runs if r.load()]
        buf = self._collect()
        chunks = [r.chunk for r in sources]
        if len(buf):
            chunks.append(buf[:pull])
        if not chunks:
            return False
        merged, cuts = merge_step(chunks, self.key)
        for r, cut in zip(sources, cuts):
            r.advance(cut)
        if len(buf):
            self._sorted = buf[cuts[-1]:]
            self._buffered -= cuts[-1]
        alive = []
        for r in self._runs:
            if r.left:
                alive.append(r)
            else:
                r.drop()
        self._runs = alive
        self._head = merged
        self._hpos = 0
        return True

    def extract_until(self, bound, inclusive: bool = False) -> np.ndarray:
        """Remove and return all records with key below ``bound`` in order."""
        bound = bound if isinstance(bound, tuple) else (bound,)
        side = "right" if inclusive else "left"
        out = []
        while True:
            if self._hpos < len(self._head):
                view = self._head[self._hpos:]
                cut = searchsorted(view, self.key, bound, side)
                if cut:
                    out.append(view[:cut])
                    self._hpos += cut
                if self._hpos < len(self._head):
                    break
            if not self._refill(self.capacity):
                break
        if not out:
            return np.zeros(0, dtype=self.dtype)
        res = out[0] if len(out) == 1 else np.concatenate(out)
        self._size -= len(res)
        return res

    def _ensure_head(self) -> bool:
        if self._hpos < len(self._head):
            return True
        return self._refill(self._small_pull)

    def peek_min_key(self):
        if self._size == 0 or not self._ensure_head():
            return None
        k = key_of(self._head[self._hpos], self.key)
        return k[0] if len(k) == 1 else k

    def extract_min(self):
        if self._size == 0 or not self._ensure_head():
            raise EmptyQueueError("extract from an empty priority queue")
        rec = self._head[self._hpos]
        self._hpos += 1
        self._size -= 1
        k = key_of(rec, self.key)
        payload = tuple(rec[f].item() for f in self._payload_fields)
        return (k[0] if len(k) == 1 else k), payload
