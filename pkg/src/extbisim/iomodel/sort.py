"""External merge sort: memory-sized runs, then multiway merges."""

from __future__ import annotations

import numpy as np

from .keys import Key, as_key, key_of, searchsorted, sort_records
from .sequence import ExternalSequence, SequenceReader


def merge_step(chunks: list[np.ndarray], key: Key) -> tuple[np.ndarray, list[int]]:
    """Emit the records that are safe to output from the loaded chunks.

    ``chunks`` are non-empty sorted arrays, one per source, listed in source
    order (older sources first). Records are ordered by ``(key, source)``;
    the bound is the smallest last loaded record under that order, so every
    emitted record precedes everything not yet loaded. Returns the merged
    records and how many were taken from each chunk.
    """
    lasts = [key_of(c[-1], key) for c in chunks]
    b = min(range(len(chunks)), key=lambda i: (lasts[i], i))
    bound = lasts[b]
    cuts = []
    pieces = []
    for i, c in enumerate(chunks):
        cut = searchsorted(c, key, bound, "right" if i <= b else "left")
        cuts.append(cut)
        if cut:
            pieces.append(c[:cut])
    merged = pieces[0] if len(pieces) == 1 else sort_records(np.concatenate(pieces), key)
    return merged, cuts


class _RunCursor:
    def __init__(self, seq: ExternalSequence, buffer_bytes: int):
        self.seq = seq
        self.reader: SequenceReader = seq.reader(buffer_bytes)
        self.chunk = self.reader.next_chunk()

    def advance(self, n: int) -> None:
        self.chunk = self.chunk[n:]
        if not len(self.chunk):
            self.chunk = self.reader.next_chunk()

    def close(self) -> None:
        self.reader.close()


def merge_runs(runs: list[ExternalSequence], key: Key, out: ExternalSequence,
               budget_bytes: int) -> ExternalSequence:
    """Stable multiway merge of sorted runs (earlier runs win ties) into ``out``."""
    B = out.device.block_size
    per_run = max(B, (budget_bytes // (len(runs) + 1) // B) * B)
    cursors = [_RunCursor(r, per_run) for r in runs]
    try:
        while True:
            live = [c for c in cursors if len(c.chunk)]
            if not live:
                break
            if len(live) == 1:
                out.append(live[0].chunk)
                live[0].advance(len(live[0].chunk))
                continue
            merged, cuts = merge_step([c.chunk for c in live], key)
            out.append(merged)
            for c, cut in zip(live, cuts):
                if cut:
                    c.advance(cut)
    finally:
        for c in cursors:
            c.close()
    return out.finish()


def external_sort(seq: ExternalSequence, key, *, budget_bytes: int | None = None,
                  tag: str = "sorted", path: str | None = None, magic: bytes | None = None,
                  delete_input: bool = False) -> ExternalSequence:
    """Sort ``seq`` by the fields in ``key``; stable, returns a new sequence.

    Run formation holds ``budget_bytes`` of records at a time (default: all
    memory not reserved by other live structures). If
    the input forms a single run it is written straight to the output,
    otherwise runs are merged with fan-in floor(budget/B) - 1 until one remains.
    """
    key = as_key(key)
    device = seq.device
    B = device.block_size
    budget = budget_bytes or device.budget.free
    budget = max(budget, 3 * B)
    with device.budget.share("sort", budget):
        return _external_sort(seq, key, budget, tag, path, magic, delete_input)


def _external_sort(seq, key, budget, tag, path, magic, delete_input):
    device = seq.device
    B = device.block_size
    fan_in = max(2, budget // B - 1)
    run_records = max(1, budget // seq.width)

    def output():
        return ExternalSequence.create(device, seq.dtype, tag, path=path, magic=magic)

    runs: list[ExternalSequence] = []
    if seq.length <= run_records:
        out = output()
        if seq.length:
            with seq.reader(budget) as rd:
                out.append(sort_records(rd.read_exact(seq.length), key))
        if delete_input:
            seq.delete()
        return out.finish()

    with seq.reader() as rd:
        while True:
            block = rd.read_exact(run_records)
            if not len(block):
                break
            run = ExternalSequence.create(device, seq.dtype, "run")
            run.append(sort_records(block, key))
            runs.append(run.finish())
            del block
    if delete_input:
        seq.delete()

    while len(runs) > fan_in:
        merged = []
        for i in range(0, len(runs), fan_in):
            group = runs[i:i + fan_in]
            if len(group) == 1:
                merged.append(group[0])
                continue
            target = ExternalSequence.create(device, seq.dtype, "run")
            merge_runs(group, key, target, budget)
            for r in group:
                r.delete()
            merged.append(target)
        runs = merged

    out = output()
    merge_runs(runs, key, out, budget)
    for r in runs:
        r.delete()
    return out

