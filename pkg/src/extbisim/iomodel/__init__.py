"""External-memory substrate: block device, sequences, sorting, priority queue."""

from .blockarray import BlockCachedArray
from .device import (
    DEFAULT_BLOCK,
    DEFAULT_MEMORY,
    IOSTATS_CSV_HEADER,
    GiB,
    KiB,
    MiB,
    BlockDevice,
    BudgetExceeded,
    IoStats,
    MachineConfig,
    MemoryBudget,
    StorageError,
    scan_cost,
    sort_cost_bound,
)
from .keys import as_key, changes, key_of, less_mask, searchsorted, sort_order, sort_records
from .pqueue import EmptyQueueError, ExternalPriorityQueue
from .sequence import ExternalSequence, FormatError, SequenceReader
from .sort import external_sort, merge_runs, merge_step
from .spill import SpillBuffer

__all__ = [
    "BlockCachedArray", "BlockDevice", "BudgetExceeded", "DEFAULT_BLOCK", "DEFAULT_MEMORY",
    "EmptyQueueError", "ExternalPriorityQueue", "ExternalSequence", "FormatError", "GiB",
    "IOSTATS_CSV_HEADER", "IoStats", "KiB", "MachineConfig", "MemoryBudget", "MiB",
    "SequenceReader", "SpillBuffer", "StorageError", "as_key", "changes", "external_sort",
    "key_of", "less_mask", "merge_runs", "merge_step", "scan_cost", "searchsorted",
    "sort_cost_bound", "sort_order", "sort_records",
]
