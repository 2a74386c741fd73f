"""Fixed-width record files accessed through sequential cursors only."""

from __future__ import annotations

import os
import struct

import numpy as np

from .device import BlockDevice, StorageError
from .keys import Key, as_key, searchsorted

_COUNT = struct.Struct("<Q")



class FormatError(ValueError):
    pass


class ExternalSequence:
    """Append-only file of fixed-width records living on a :class:`BlockDevice`.

    Temporary sequences (the default) must have a width dividing the block size,
    so no record straddles two blocks. Persistent files may carry a magic header
    followed by a little-endian 64-bit record count.
    """

    def __init__(self, device: BlockDevice, dtype, path: str, *, magic: bytes | None = None,
                 temporary: bool = True):
        self.device = device
        self.dtype = np.dtype(dtype)
        self.width = self.dtype.itemsize
        self.path = path
        self.magic = magic
        self.header_size = 0 if magic is None else len(magic) + _COUNT.size
        self.temporary = temporary
        self.length = 0
        self._fh = None
        self._pending = bytearray()
        self._writable = False

    # -- construction -----------------------------------------------------

    @classmethod
    def create(cls, device: BlockDevice, dtype, tag: str = "seq", *, path: str | None = None,
               magic: bytes | None = None) -> "ExternalSequence":
        temporary = path is None
        if temporary:
            path = device.temp_path(tag)
            width = np.dtype(dtype).itemsize
            if device.block_size % width:
                raise ValueError(
                    f"block size {device.block_size} is not a multiple of record width {width}"
                )
        seq = cls(device, dtype, path, magic=magic, temporary=temporary)
        seq._fh = device.open(path, "wb")
        seq._writable = True
        if magic is not None:
            seq._pending += magic + _COUNT.pack(0)
        return seq

    @classmethod
    def open(cls, device: BlockDevice, dtype, path: str, *, magic: bytes | None = None) -> "ExternalSequence":
        seq = cls(device, dtype, path, magic=magic, temporary=False)
        try:
            size = os.path.getsize(path)
        except OSError as exc:
            raise StorageError(f"cannot stat ({exc.strerror})", path) from exc
        if magic is not None:
            with open(path, "rb") as fh:
                head = fh.read(seq.header_size)
            if len(head) < seq.header_size or head[: len(magic)] != magic:
                raise FormatError(f"{path}: missing {magic.decode()} header")
            seq.length = _COUNT.unpack(head[len(magic):])[0]
            expected = seq.header_size + seq.length * seq.width
            if size != expected:
                raise FormatError(
                    f"{path}: header announces {seq.length} records but file has {size} bytes"
                )
        else:
            if size % seq.width:
                raise FormatError(f"{path}: size {size} is not a multiple of {seq.width}")
            seq.length = size // seq.width
        return seq

    @classmethod
    def from_array(cls, device: BlockDevice, arr: np.ndarray, tag: str = "seq") -> "ExternalSequence":
        seq = cls.create(device, arr.dtype, tag)
        seq.append(arr)
        return seq.finish()

    # -- writing ----------------------------------------------------------

    def __len__(self) -> int:
        return self.length

    @property
    def nbytes(self) -> int:
        return self.length * self.width

    def append(self, records: np.ndarray) -> None:
        if not self._writable:
            raise RuntimeError(f"{self.path} is not open for appending")
        n = len(records)
        if n == 0:
            return
        if records.dtype != self.dtype:
            records = records.astype(self.dtype)
        data = np.ascontiguousarray(records).view(np.uint8).reshape(-1)
        self.length += n
        B = self.device.block_size
        if self._pending:
            fill = min(len(data), (-len(self._pending)) % B or B)
            self._pending += data[:fill].tobytes()
            data = data[fill:]
            if len(self._pending) >= B:
                self.device.write(self._fh, self._pending, self.path)
                self._pending = bytearray()
        if len(data):
            full = (len(data) // B) * B
            if full:
                self.device.write(self._fh, data[:full], self.path)
            self._pending += data[full:].tobytes()

    def finish(self) -> "ExternalSequence":
        if not self._writable:
            return self
        if self._pending:
            self.device.write(self._fh, self._pending, self.path)
            self._pending = bytearray()
        if self.magic is not None:
            self.device.pwrite(self._fh, _COUNT.pack(self.length), len(self.magic), self.path)
        self._fh.close()
        self._fh = None
        self._writable = False
        return self

    # -- reading ----------------------------------------------------------

    def reader(self, buffer_bytes: int | None = None) -> "SequenceReader":
        if self._writable:
            raise RuntimeError(f"{self.path} is still being written")
        return SequenceReader(self, buffer_bytes)

    def chunks(self, max_records: int | None = None, buffer_bytes: int | None = None):
        rd = self.reader(buffer_bytes)
        try:
            while True:
                chunk = rd.next_chunk(max_records)
                if not len(chunk):
                    return
                yield chunk
        finally:
            rd.close()

    def read_all(self) -> np.ndarray:
        parts = list(self.chunks())
        if not parts:
            return np.zeros(0, dtype=self.dtype)
        return np.concatenate(parts)

    def delete(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None
        self._writable = False
        try:
            os.remove(self.path)
        except FileNotFoundError:
            pass


class SequenceReader:
    """Forward-only cursor over an :class:`ExternalSequence`."""

    def __init__(self, seq: ExternalSequence, buffer_bytes: int | None = None):
        self.seq = seq
        self.dtype = seq.dtype
        B = seq.device.block_size
        if buffer_bytes is None:
            buffer_bytes = seq.device.stream_buffer_bytes()
        self._chunk_bytes = max(B, (buffer_bytes // B) * B)
        self._fh = seq.device.open(seq.path, "rb")
        self._file_left = seq.header_size + seq.length * seq.width
        self._skip = seq.header_size
        self._carry = b""
        self._buf = np.zeros(0, dtype=self.dtype)
        self._pos = 0
        self.consumed = 0

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    @property
    def buffered(self) -> int:
        return len(self._buf) - self._pos

    def exhausted(self) -> bool:
        return self.buffered == 0 and self._file_left == 0 and not self._carry

    def _load(self) -> bool:
        """Append the next read-ahead chunk to the buffer; False at end of file."""
        if self._file_left == 0 or self._fh is None:
            return False
        want = min(self._chunk_bytes, self._file_left)
        data = self.seq.device.read(self._fh, want, self.seq.path)
        if len(data) != want:
            raise StorageError("short read", self.seq.path)
        self._file_left -= want
        if self._skip:
            cut = min(self._skip, len(data))
            data = data[cut:]
            self._skip -= cut
        data = self._carry + data
        w = self.seq.width
        usable = (len(data) // w) * w
        self._carry = data[usable:]
        fresh = np.frombuffer(bytearray(data[:usable]), dtype=self.dtype)
        rest = self._buf[self._pos:]
        self._buf = fresh if not len(rest) else np.concatenate([rest, fresh])
        self._pos = 0
        return True

    def _ensure(self) -> bool:
        while self.buffered == 0:
            if not self._load():
                return False
        return True

    def next_chunk(self, max_records: int | None = None) -> np.ndarray:
        """Up to ``max_records`` records (at least one unless exhausted)."""
        if not self._ensure():
            return self._buf[:0]
        end = len(self._buf) if max_records is None else min(len(self._buf), self._pos + max_records)
        out = self._buf[self._pos:end]
        self._pos = end
        self.consumed += len(out)
        return out

    def read_exact(self, n: int) -> np.ndarray:
        parts = []
        while n > 0:
            chunk = self.next_chunk(n)
            if not len(chunk):
                break
            parts.append(chunk)
            n -= len(chunk)
        return _concat(parts, self.dtype)

    def peek(self):
        if not self._ensure():
            return None
        return self._buf[self._pos]

    def take_while(self, key: str | Key, bound, inclusive: bool = True,
                   limit: int | None = None) -> np.ndarray:
        """Leading records with ``key <= bound`` (``<`` if not inclusive).

        The stream must be sorted by ``key``. ``limit`` caps the number of
        records returned; the caller sees a full-limit result as "maybe more".
        """
        key = as_key(key)
        bound = tuple(bound) if isinstance(bound, tuple) else (bound,)
        side = "right" if inclusive else "left"
        parts = []
        taken = 0
        while self._ensure():
            view = self._buf[self._pos:]
            cut = searchsorted(view, key, bound, side)
            if limit is not None:
                cut = min(cut, limit - taken)
            if cut:
                parts.append(view[:cut])
                taken += cut
                self._pos += cut
                self.consumed += cut
            if cut < len(view) or (limit is not None and taken >= limit):
                break
        return _concat(parts, self.dtype)

    def pushback(self, records: np.ndarray) -> None:
        """Return records just taken to the front of the cursor."""
        if not len(records):
            return
        self._buf = np.concatenate([records, self._buf[self._pos:]])
        self._pos = 0
        self.consumed -= len(records)


def _concat(parts, dtype) -> np.ndarray:
    if not parts:
        return np.zeros(0, dtype=dtype)
    if len(parts) == 1:
        return parts[0]
    return np.concatenate(parts)
