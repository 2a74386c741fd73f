"""Block device with IO accounting, machine configuration and memory budget."""

from __future__ import annotations

import contextlib
import math
import os
import shutil
import tempfile
from dataclasses import dataclass, fields

KiB = 1024
MiB = 1024 * KiB
GiB = 1024 * MiB

DEFAULT_MEMORY = 256 * MiB
DEFAULT_BLOCK = 64 * KiB


class StorageError(OSError):
    """Unrecoverable failure of the spill storage (disk full, unreadable file)."""

    def __init__(self, message: str, path: str | None = None):
        super().__init__(f"{message}: {path}" if path else message)
        self.path = path


class BudgetExceeded(MemoryError):
    pass


@dataclass(frozen=True)
class MachineConfig:
    memory_budget_bytes: int = DEFAULT_MEMORY
    block_size_bytes: int = DEFAULT_BLOCK
    temp_directory: str | None = None

    def __post_init__(self):
        if self.block_size_bytes <= 0:
            raise ValueError("block_size_bytes must be positive")
        if self.memory_budget_bytes <= 0:
            raise ValueError("memory_budget_bytes must be positive")
        if self.memory_budget_bytes < 3 * self.block_size_bytes:
            raise ValueError(
                f"memory budget {self.memory_budget_bytes} holds fewer than three "
                f"blocks of {self.block_size_bytes} bytes"
            )

    @property
    def blocks_in_memory(self) -> int:
        return self.memory_budget_bytes // self.block_size_bytes

    @property
    def fan_in(self) -> int:
        """Multiway merge fan-in: one block per input run plus one output block."""
        return max(2, self.blocks_in_memory - 1)


@dataclass
class IoStats:
    reads: int = 0
    writes: int = 0
    bytes_read: int = 0
    bytes_written: int = 0

    @property
    def total(self) -> int:
        return self.reads + self.writes

    def add(self, other: "IoStats") -> "IoStats":
        for f in fields(self):
            setattr(self, f.name, getattr(self, f.name) + getattr(other, f.name))
        return self

    def copy(self) -> "IoStats":
        return IoStats(self.reads, self.writes, self.bytes_read, self.bytes_written)

    def __sub__(self, other: "IoStats") -> "IoStats":
        return IoStats(
            self.reads - other.reads,
            self.writes - other.writes,
            self.bytes_read - other.bytes_read,
            self.bytes_written - other.bytes_written,
        )

    def csv_row(self, phase: str) -> str:
        return f"{phase},{self.reads},{self.writes},{self.bytes_read},{self.bytes_written}"


IOSTATS_CSV_HEADER = "phase,reads,writes,bytes_read,bytes_written"


def scan_cost(n: int, record_width: int, cfg: MachineConfig) -> int:
    """Blocks needed to stream ``n`` records of ``record_width`` bytes."""
    if n < 0:
        raise ValueError("n must be non-negative")
    return -(-(n * record_width) // cfg.block_size_bytes)


def sort_cost_bound(n: int, record_width: int, cfg: MachineConfig, c: float = 2.0) -> float:
    """Upper bound c * Scan(n) * (1 + ceil(log_fanin(runs))) used in regression checks.

    Every pass reads and writes the data once, hence the factor two folded into c.
    """
    blocks = scan_cost(n, record_width, cfg)
    if blocks == 0:
        return 0.0
    run_records = max(1, cfg.memory_budget_bytes // record_width)
    runs = max(1, -(-n // run_records))
    passes = 0 if runs == 1 else math.ceil(math.log(runs, cfg.fan_in))
    return c * blocks * (1 + passes)


class MemoryBudget:
    """Explicit byte shares of M handed to concurrently live structures."""

    def __init__(self, total: int):
        self.total = total
        self.used = 0
        self.peak = 0
        self._shares: dict[str, int] = {}

    @property
    def free(self) -> int:
        return self.total - self.used

    def reserve(self, name: str, nbytes: int) -> int:
        nbytes = int(nbytes)
        if nbytes < 0:
            raise ValueError("negative reservation")
        if self.used + nbytes > self.total:
            raise BudgetExceeded(
                f"reserving {nbytes} bytes for {name!r} exceeds budget "
                f"({self.used} of {self.total} in use)"
            )
        key = name
        i = 1
        while key in self._shares:
            i += 1
            key = f"{name}#{i}"
        self._shares[key] = nbytes
        self.used += nbytes
        self.peak = max(self.peak, self.used)
        return nbytes

    def release(self, name: str) -> None:
        nbytes = self._shares.pop(name, 0)
        self.used -= nbytes

    @contextlib.contextmanager
    def share(self, name: str, nbytes: int):
        self.reserve(name, nbytes)
        try:
            yield int(nbytes)
        finally:
            self.release(name)


class BlockDevice:
    """Counts logical block transfers against private spill files.

    All files created through the device live in one private directory that is
    removed on :meth:`close`. Files outside that directory (inputs, outputs) can
    be read and written through the same accounting.
    """

    def __init__(self, cfg: MachineConfig | None = None):
        self.cfg = cfg or MachineConfig()
        self.block_size = self.cfg.block_size_bytes
        self.stats = IoStats()
        self.phase_stats: dict[str, IoStats] = {}
        self._phase: str | None = None
        try:
            self.directory = tempfile.mkdtemp(prefix="extbisim-", dir=self.cfg.temp_directory)
        except OSError as exc:
            raise StorageError(f"cannot create spill directory ({exc})", self.cfg.temp_directory)
        self._serial = 0
        self.budget = MemoryBudget(self.cfg.memory_budget_bytes)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def close(self) -> None:
        if self.directory and os.path.isdir(self.directory):
            shutil.rmtree(self.directory, ignore_errors=True)
        self.directory = None

    def temp_path(self, tag: str = "seq") -> str:
        if self.directory is None:
            raise StorageError("device is closed")
        self._serial += 1
        return os.path.join(self.directory, f"{self._serial:06d}-{tag}.bin")

    @contextlib.contextmanager
    def phase(self, name: str):
        prev = self._phase
        self._phase = name
        self.phase_stats.setdefault(name, IoStats())
        try:
            yield self.phase_stats[name]
        finally:
            self._phase = prev

    def _blocks(self, nbytes: int) -> int:
        return -(-nbytes // self.block_size)

    def _account(self, reads=0, writes=0, bytes_read=0, bytes_written=0):
        targets = [self.stats]
        if self._phase is not None:
            targets.append(self.phase_stats[self._phase])
        for s in targets:
            s.reads += reads
            s.writes += writes
            s.bytes_read += bytes_read
            s.bytes_written += bytes_written

    def write(self, fh, data, path: str | None = None) -> None:
        view = memoryview(data).cast("B")
        n = view.nbytes
        if n == 0:
            return
        try:
            done = 0
            while done < n:
                done += fh.write(view[done:])
        except OSError as exc:
            raise StorageError(f"write failed ({exc.strerror})", path) from exc
        self._account(writes=self._blocks(n), bytes_written=n)

    def pwrite(self, fh, data, offset: int, path: str | None = None) -> None:
        try:
            os.pwrite(fh.fileno(), data, offset)
        except OSError as exc:
            raise StorageError(f"write failed ({exc.strerror})", path) from exc
        self._account(writes=self._blocks(len(data)), bytes_written=len(data))

    def pread(self, fh, nbytes: int, offset: int, path: str | None = None) -> bytes:
        try:
            data = os.pread(fh.fileno(), nbytes, offset)
        except OSError as exc:
            raise StorageError(f"read failed ({exc.strerror})", path) from exc
        if data:
            self._account(reads=self._blocks(len(data)), bytes_read=len(data))
        return data

    def stream_buffer_bytes(self) -> int:
        """Read-ahead for one sequential cursor: 1 MiB or M/64, whole blocks."""
        B = self.block_size
        want = min(1 << 20, self.cfg.memory_budget_bytes // 64)
        return max(B, (want // B) * B)

    def read(self, fh, nbytes: int, path: str | None = None) -> bytes:
        try:
            data = fh.read(nbytes)
        except OSError as exc:
            raise StorageError(f"read failed ({exc.strerror})", path) from exc
        if data:
            self._account(reads=self._blocks(len(data)), bytes_read=len(data))
        return data

    def open(self, path: str, mode: str):
        try:
            return open(path, mode, buffering=0)
        except OSError as exc:
            raise StorageError(f"cannot open ({exc.strerror})", path) from exc
