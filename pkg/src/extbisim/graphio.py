"""On-disk graph files, input validation, renumbering and quotient construction.

Binary files are little-endian fixed-width records behind a five byte magic
and a 64-bit record count:

* ``EXBG1`` nodes ``(id: u64, label: u32)``
* ``EXBE1`` edges ``(parent: u64, child: u64)``
* ``EXBP1`` partitions ``(origId: u64, bisimId: u64)``

Node files are sorted by id and edge files by child, children carrying
smaller ids than their parents. Label code 0 is reserved; real labels start
at 1 and may be named through a ``label_code,utf8_string`` CSV sidecar.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .iomodel import (
    BlockDevice,
    ExternalSequence,
    FormatError,
    SequenceReader,
    changes,
    external_sort,
)

NODE_MAGIC = b"EXBG1"
EDGE_MAGIC = b"EXBE1"
PARTITION_MAGIC = b"EXBP1"

NODE_DTYPE = np.dtype([("id", "<u8"), ("label", "<u4")])
EDGE_DTYPE = np.dtype([("parent", "<u8"), ("child", "<u8")])
PARTITION_DTYPE = np.dtype([("orig", "<u8"), ("bisim", "<u8")])

# internal spill records are padded so their width divides the block size
NODE_REC = np.dtype([("id", "<u8"), ("label", "<u4"), ("pad", "<u4")])
RANKED_DTYPE = np.dtype(
    [("id", "<u8"), ("orig", "<u8"), ("rank", "<u4"), ("label", "<u4"), ("hash", "<u8")]
)
MAP_DTYPE = np.dtype([("orig", "<u8"), ("new", "<u8")])

CHUNK = 1 << 16


class ValidationError(ValueError):
    def __init__(self, message: str, report: "ValidationReport | None" = None):
        super().__init__(message)
        self.report = report


class CoverageError(ValueError):
    pass


# -- file helpers ------------------------------------------------------------

def open_nodes(device: BlockDevice, path: str) -> ExternalSequence:
    return ExternalSequence.open(device, NODE_DTYPE, path, magic=NODE_MAGIC)


def open_edges(device: BlockDevice, path: str) -> ExternalSequence:
    return ExternalSequence.open(device, EDGE_DTYPE, path, magic=EDGE_MAGIC)


def open_partition(device: BlockDevice, path: str) -> ExternalSequence:
    return ExternalSequence.open(device, PARTITION_DTYPE, path, magic=PARTITION_MAGIC)


def _write(device, dtype, magic, path, columns) -> ExternalSequence:
    arr = np.zeros(len(columns[0]), dtype=dtype if path is not None else _padded(dtype))
    for name, col in zip(dtype.names, columns):
        arr[name] = col
    if path is None:
        return ExternalSequence.from_array(device, arr, "mem")
    seq = ExternalSequence.create(device, dtype, path=path, magic=magic)
    seq.append(arr)
    return seq.finish()


def _padded(dtype: np.dtype) -> np.dtype:
    return NODE_REC if dtype == NODE_DTYPE else dtype


def write_nodes(device, path, ids, labels) -> ExternalSequence:
    """Write a node file from arrays; ``path=None`` keeps it as a temp sequence."""
    return _write(device, NODE_DTYPE, NODE_MAGIC, path, [np.asarray(ids), np.asarray(labels)])


def write_edges(device, path, parents, children) -> ExternalSequence:
    return _write(device, EDGE_DTYPE, EDGE_MAGIC, path, [np.asarray(parents), np.asarray(children)])


def write_partition(device, path, orig, bisim) -> ExternalSequence:
    return _write(device, PARTITION_DTYPE, PARTITION_MAGIC, path, [np.asarray(orig), np.asarray(bisim)])


def copy_to_file(seq: ExternalSequence, path: str, dtype: np.dtype, magic: bytes) -> ExternalSequence:
    """Stream a (possibly padded) sequence into an interchange file."""
    out = ExternalSequence.create(seq.device, dtype, path=path, magic=magic)
    for chunk in seq.chunks():
        rec = np.zeros(len(chunk), dtype=dtype)
        for name in dtype.names:
            rec[name] = chunk[name]
        out.append(rec)
    return out.finish()


def load_array(seq: ExternalSequence) -> np.ndarray:
    return seq.read_all()


class LabelTable:
    """Interns label strings to codes 1, 2, ...; code 0 stays reserved."""

    def __init__(self):
        self.codes: dict[str, int] = {}
        self.names: list[str] = [""]

    def intern(self, name: str) -> int:
        code = self.codes.get(name)
        if code is None:
            code = len(self.names)
            if code >= 1 << 32:
                raise OverflowError("more than 2^32 - 1 distinct labels")
            self.codes[name] = code
            self.names.append(name)
        return code

    def name(self, code: int) -> str:
        return self.names[code] if 0 < code < len(self.names) else str(code)

    def __len__(self) -> int:
        return len(self.names) - 1

    def save(self, path: str) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["label_code", "utf8_string"])
            for code in range(1, len(self.names)):
                w.writerow([code, self.names[code]])

    @classmethod
    def load(cls, path: str) -> "LabelTable":
        table = cls()
        with open(path, newline="", encoding="utf-8") as fh:
            rows = csv.reader(fh)
            header = next(rows, None)
            if header != ["label_code", "utf8_string"]:
                raise FormatError(f"{path}: not a label table")
            for code, name in rows:
                if int(code) != len(table.names):
                    raise FormatError(f"{path}: label codes must be consecutive from 1")
                table.intern(name)
        return table


# -- text interop --------------------------------------------------------------

def _text_rows(path: str, ncols: int, lines_per_chunk: int = 1 << 18):
    with open(path, "rb") as fh:
        lineno = 0
        while True:
            lines = fh.readlines(lines_per_chunk * 16)
            if not lines:
                return
            rows = []
            for line in lines:
                lineno += 1
                tok = line.split()
                if not tok or tok[0].startswith(b"#"):
                    continue
                if len(tok) != ncols:
                    raise FormatError(f"{path}:{lineno}: expected {ncols} fields")
                rows.append(tok)
            if rows:
                yield rows, lineno


def nodes_from_text(device: BlockDevice, text_path: str, out_path: str,
                    labels: LabelTable | None = None) -> ExternalSequence:
    """Convert ``id label`` lines; non-numeric labels are interned into ``labels``."""
    out = ExternalSequence.create(device, NODE_DTYPE, path=out_path, magic=NODE_MAGIC)
    for rows, lineno in _text_rows(text_path, 2):
        arr = np.zeros(len(rows), dtype=NODE_DTYPE)
        try:
            arr["id"] = [int(r[0]) for r in rows]
        except ValueError as exc:
            raise FormatError(f"{text_path}: bad node id near line {lineno}") from exc
        codes = []
        for r in rows:
            tok = r[1]
            if tok.isdigit():
                codes.append(int(tok))
            elif labels is None:
                raise FormatError(f"{text_path}: label {tok.decode()!r} needs a label table")
            else:
                codes.append(labels.intern(tok.decode("utf-8")))
        arr["label"] = codes
        out.append(arr)
    return out.finish()


def edges_from_text(device: BlockDevice, text_path: str, out_path: str) -> ExternalSequence:
    """Convert ``parent child`` lines and sort the result by child."""
    tmp = ExternalSequence.create(device, EDGE_DTYPE, "text-edges")
    for rows, lineno in _text_rows(text_path, 2):
        try:
            vals = np.array([[int(a), int(b)] for a, b in rows], dtype=np.uint64)
        except ValueError as exc:
            raise FormatError(f"{text_path}: bad edge near line {lineno}") from exc
        arr = np.zeros(len(rows), dtype=EDGE_DTYPE)
        arr["parent"] = vals[:, 0]
        arr["child"] = vals[:, 1]
        tmp.append(arr)
    tmp.finish()
    return external_sort(tmp, ("child", "parent"), path=out_path, magic=EDGE_MAGIC,
                         delete_input=True)


def sequence_to_text(seq: ExternalSequence, text_path: str, fields: tuple[str, ...],
                     labels: LabelTable | None = None) -> None:
    with open(text_path, "w", encoding="utf-8") as fh:
        for chunk in seq.chunks():
            cols = [chunk[f].tolist() for f in fields]
            if labels is not None and "label" in fields:
                i = fields.index("label")
                cols[i] = [labels.name(c) for c in cols[i]]
            fh.writelines(" ".join(map(str, row)) + "\n" for row in zip(*cols))


def nodes_to_text(seq, text_path, labels=None):
    sequence_to_text(seq, text_path, ("id", "label"), labels)


def edges_to_text(seq, text_path):
    sequence_to_text(seq, text_path, ("parent", "child"))


def partition_to_text(seq, text_path):
    sequence_to_text(seq, text_path, ("orig", "bisim"))


def partition_from_text(device, text_path, out_path) -> ExternalSequence:
    out = ExternalSequence.create(device, PARTITION_DTYPE, path=out_path, magic=PARTITION_MAGIC)
    for rows, _ in _text_rows(text_path, 2):
        arr = np.zeros(len(rows), dtype=PARTITION_DTYPE)
        arr["orig"] = [int(r[0]) for r in rows]
        arr["bisim"] = [int(r[1]) for r in rows]
        out.append(arr)
    return out.finish()


# -- merge joins ---------------------------------------------------------------

class SortedLookup:
    """Merge-join cursor mapping non-decreasing keys through a table sorted by key.

    Successive :meth:`lookup` calls must present keys in non-decreasing order
    across calls, so the table is read exactly once.
    """

    def __init__(self, reader: SequenceReader, key_field: str, value_field: str | None = None):
        self.reader = reader
        self.key_field = key_field
        self.value_field = value_field
        self.window = np.zeros(0, dtype=reader.dtype)

    def lookup(self, keys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if not len(keys):
            return np.zeros(0, dtype=np.uint64), np.zeros(0, dtype=bool)
        kf = self.key_field
        lo = keys[0]
        w = self.window
        w = w[np.searchsorted(w[kf], lo, side="left"):]
        more = self.reader.take_while(kf, int(keys[-1]))
        if len(more):
            more = more[np.searchsorted(more[kf], lo, side="left"):]
            w = np.concatenate([w, more]) if len(w) else more
        self.window = w
        if not len(w):
            return np.zeros(len(keys), dtype=np.uint64), np.zeros(len(keys), dtype=bool)
        idx = np.searchsorted(w[kf], keys, side="left")
        idx = np.minimum(idx, len(w) - 1)
        found = w[kf][idx] == keys
        values = w[self.value_field][idx] if self.value_field else idx
        return values, found


# -- validation ----------------------------------------------------------------

@dataclass
class Violation:
    kind: str
    file: str
    offset: int
    detail: str

    def __str__(self):
        return f"{self.kind}: {self.file} record {self.offset}: {self.detail}"


@dataclass
class ValidationReport:
    nodes: int = 0
    edges: int = 0
    dense_ids: bool = True
    duplicate_edges: int = 0
    first_duplicate_offset: int | None = None
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def kinds(self) -> set[str]:
        return {v.kind for v in self.violations}

    def add(self, kind, file, offset, detail):
        if kind not in self.kinds():
            self.violations.append(Violation(kind, file, int(offset), detail))

    def lines(self) -> list[str]:
        out = [f"nodes={self.nodes} edges={self.edges} dense_ids={self.dense_ids} "
               f"duplicate_edges={self.duplicate_edges}"]
        out += [str(v) for v in self.violations]
        out.append("valid" if self.ok else "invalid")
        return out

    def raise_if_invalid(self):
        if not self.ok:
            raise ValidationError("; ".join(str(v) for v in self.violations), self)


ENDPOINT_MISSING = "endpoint missing"
ORDER_VIOLATED = "topological order violated"
NODES_UNSORTED = "node ids not strictly increasing"
EDGES_UNSORTED = "edges not sorted by child"

_ENDPOINT = np.dtype([("id", "<u8"), ("offset", "<u8")])


def validate_input(nodes: ExternalSequence, edges: ExternalSequence) -> ValidationReport:
    """Stream both files once and report the first offending record per violation.

    Node ids that are exactly ``0..n-1`` make endpoint presence a range check;
    sparse ids fall back to sorting the endpoints and merge-joining them.
    """
    rep = ValidationReport(nodes=len(nodes), edges=len(edges))
    last = None
    offset = 0
    for chunk in nodes.chunks(CHUNK):
        ids = chunk["id"].astype(np.uint64)
        prev = np.concatenate([[ids[0] if last is None else last], ids[:-1]]).astype(np.uint64)
        bad = np.flatnonzero(ids <= prev)
        if last is None:
            bad = bad[bad > 0]
        if len(bad):
            i = int(bad[0])
            rep.add(NODES_UNSORTED, "nodes", offset + i, f"id {int(ids[i])} after {int(prev[i])}")
        if rep.dense_ids and not np.array_equal(ids, np.arange(offset, offset + len(ids), dtype=np.uint64)):
            rep.dense_ids = False
        last = ids[-1]
        offset += len(ids)

    n = len(nodes)
    sparse_endpoints = None
    if not rep.dense_ids:
        sparse_endpoints = ExternalSequence.create(nodes.device, _ENDPOINT, "endpoints")
    last_child = None
    offset = 0
    rd = edges.reader()
    try:
        while True:
            chunk = rd.next_chunk(CHUNK)
            if not len(chunk):
                break
            if rd.exhausted() is False and EDGES_UNSORTED not in rep.kinds():
                # keep every child's edges in one chunk for the duplicate check
                tail = rd.take_while("child", int(chunk["child"][-1]))
                if len(tail):
                    chunk = np.concatenate([chunk, tail])
            p = chunk["parent"]
            c = chunk["child"]
            m = len(chunk)
            prev_c = np.concatenate([[c[0] if last_child is None else last_child], c[:-1]])
            unsorted = np.flatnonzero(c < prev_c)
            if len(unsorted):
                i = int(unsorted[0])
                rep.add(EDGES_UNSORTED, "edges", offset + i, f"child {int(c[i])} out of order")
            viol = np.flatnonzero(p <= c)
            if len(viol):
                i = int(viol[0])
                rep.add(ORDER_VIOLATED, "edges", offset + i,
                        f"edge parent {int(p[i])} -> child {int(c[i])} needs child < parent")
            if rep.dense_ids:
                miss = np.flatnonzero((p >= n) | (c >= n))
                if len(miss):
                    i = int(miss[0])
                    rep.add(ENDPOINT_MISSING, "edges", offset + i,
                            f"edge parent {int(p[i])} -> child {int(c[i])} in a {n}-node file")
            else:
                ep = np.zeros(2 * m, dtype=_ENDPOINT)
                ep["id"][:m] = p
                ep["id"][m:] = c
                ep["offset"][:m] = np.arange(offset, offset + m)
                ep["offset"][m:] = ep["offset"][:m]
                sparse_endpoints.append(ep)
            if EDGES_UNSORTED not in rep.kinds() and m > 1:
                order = np.lexsort((p, c))
                ps, cs = p[order], c[order]
                dup = np.flatnonzero((ps[1:] == ps[:-1]) & (cs[1:] == cs[:-1]))
                if len(dup):
                    rep.duplicate_edges += len(dup)
                    first = int(np.sort(order[dup + 1])[0]) + offset
                    if rep.first_duplicate_offset is None:
                        rep.first_duplicate_offset = first
            last_child = c[-1]
            offset += m
    finally:
        rd.close()

    if sparse_endpoints is not None:
        sparse_endpoints.finish()
        srt = external_sort(sparse_endpoints, ("id", "offset"), delete_input=True)
        first_missing = None
        with nodes.reader() as nr:
            look = SortedLookup(nr, "id")
            for chunk in srt.chunks(CHUNK):
                _, found = look.lookup(chunk["id"])
                if not found.all():
                    o = int(chunk["offset"][~found].min())
                    first_missing = o if first_missing is None else min(first_missing, o)
        srt.delete()
        if first_missing is not None:
            with edges.reader() as er:
                er.read_exact(first_missing)
                e = er.read_exact(1)[0]
            rep.add(ENDPOINT_MISSING, "edges", first_missing,
                    f"edge parent {int(e['parent'])} -> child {int(e['child'])} names an absent node")
    return rep


# -- renumbering ---------------------------------------------------------------

def renumber(ranks: ExternalSequence, edges: ExternalSequence, *, tag: str = "renumber"
             ) -> tuple[ExternalSequence, ExternalSequence, ExternalSequence]:
    """Give nodes their 1-based position in ``ranks`` as id and rewrite the edges.

    ``ranks`` holds :data:`RANKED_DTYPE` records in target order (``orig`` set,
    ``id`` ignored); ``edges`` is sorted by child. Returns ``(nodes', edges', R)``
    with ``edges'`` sorted by child and ``R`` sorted by original id.
    """
    device = ranks.device
    out_nodes = ExternalSequence.create(device, RANKED_DTYPE, tag + "-nodes")
    r = ExternalSequence.create(device, MAP_DTYPE, tag + "-map")
    pos = 1
    for chunk in ranks.chunks(CHUNK):
        chunk = chunk.copy()
        chunk["id"] = np.arange(pos, pos + len(chunk), dtype=np.uint64)
        pos += len(chunk)
        out_nodes.append(chunk)
        m = np.zeros(len(chunk), dtype=MAP_DTYPE)
        m["orig"] = chunk["orig"]
        m["new"] = chunk["id"]
        r.append(m)
    out_nodes.finish()
    r = external_sort(r.finish(), "orig", tag=tag + "-map", delete_input=True)

    half = _rewrite(edges, r, "child", tag + "-e1")
    by_parent = external_sort(half, ("parent", "child"), tag=tag + "-e1p", delete_input=True)
    full = _rewrite(by_parent, r, "parent", tag + "-e2")
    by_parent.delete()
    new_edges = external_sort(full, ("child", "parent"), tag=tag + "-edges", delete_input=True)
    return out_nodes, new_edges, r


def _rewrite(edges: ExternalSequence, r: ExternalSequence, which: str, tag: str) -> ExternalSequence:
    out = ExternalSequence.create(edges.device, EDGE_DTYPE, tag)
    offset = 0
    with r.reader() as rr:
        look = SortedLookup(rr, "orig", "new")
        for chunk in edges.chunks(CHUNK):
            vals, found = look.lookup(chunk[which])
            if not found.all():
                i = int(np.flatnonzero(~found)[0])
                raise ValidationError(
                    f"{ENDPOINT_MISSING}: edge record {offset + i} {which} "
                    f"{int(chunk[which][i])} is not a node")
            chunk = chunk.copy()
            chunk[which] = vals
            out.append(chunk)
            offset += len(chunk)
    return out.finish()


# -- partitions ------------------------------------------------------------------

def canonical_array(orig: np.ndarray, bisim: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """In-memory canonical form: sorted by origId, blocks numbered 1.. by first appearance."""
    order = np.argsort(orig, kind="stable")
    o = np.asarray(orig)[order]
    if len(o) > 1 and np.any(o[1:] == o[:-1]):
        raise FormatError("duplicate origId in partition")
    b = np.asarray(bisim)[order]
    _, first, inverse = np.unique(b, return_index=True, return_inverse=True)
    rank_of_block = np.empty(len(first), dtype=np.uint64)
    rank_of_block[np.argsort(first, kind="stable")] = np.arange(1, len(first) + 1, dtype=np.uint64)
    return o.astype(np.uint64), rank_of_block[inverse.reshape(-1)]


_CANON = np.dtype([("bisim", "<u8"), ("pos", "<u8"), ("orig", "<u8"), ("canon", "<u8")])
_FIRST = np.dtype([("pos", "<u8"), ("bisim", "<u8")])


def canonicalize(partition: ExternalSequence, path: str | None = None) -> ExternalSequence:
    """Rename blocks to 1..k by first appearance in origId order, output sorted by origId."""
    device = partition.device
    by_orig = external_sort(partition, "orig", tag="canon-orig")
    work = ExternalSequence.create(device, _CANON, "canon-work")
    pos = 0
    last = None
    for chunk in by_orig.chunks(CHUNK):
        o = chunk["orig"]
        if (len(o) > 1 and np.any(o[1:] == o[:-1])) or (last is not None and o[0] == last):
            by_orig.delete()
            work.delete()
            raise FormatError("duplicate origId in partition")
        last = o[-1]
        w = np.zeros(len(chunk), dtype=_CANON)
        w["bisim"] = chunk["bisim"]
        w["orig"] = o
        w["pos"] = np.arange(pos, pos + len(chunk))
        pos += len(chunk)
        work.append(w)
    by_orig.delete()
    by_block = external_sort(work.finish(), ("bisim", "pos"), tag="canon-block", delete_input=True)

    firsts = ExternalSequence.create(device, _FIRST, "canon-first")
    prev = None
    for chunk in by_block.chunks(CHUNK):
        start = changes(chunk, ("bisim",))
        if prev is not None and chunk["bisim"][0] == prev:
            start[0] = False
        prev = chunk["bisim"][-1]
        f = np.zeros(int(start.sum()), dtype=_FIRST)
        f["pos"] = chunk["pos"][start]
        f["bisim"] = chunk["bisim"][start]
        firsts.append(f)
    ordered = external_sort(firsts.finish(), "pos", tag="canon-first", delete_input=True)
    table = ExternalSequence.create(device, MAP_DTYPE, "canon-table")
    k = 1
    for chunk in ordered.chunks(CHUNK):
        t = np.zeros(len(chunk), dtype=MAP_DTYPE)
        t["orig"] = chunk["bisim"]
        t["new"] = np.arange(k, k + len(chunk))
        k += len(chunk)
        table.append(t)
    ordered.delete()
    table = external_sort(table.finish(), "orig", tag="canon-table", delete_input=True)

    renamed = ExternalSequence.create(device, _CANON, "canon-renamed")
    with table.reader() as tr:
        look = SortedLookup(tr, "orig", "new")
        for chunk in by_block.chunks(CHUNK):
            vals, _ = look.lookup(chunk["bisim"])
            chunk = chunk.copy()
            chunk["canon"] = vals
            renamed.append(chunk)
    by_block.delete()
    table.delete()
    back = external_sort(renamed.finish(), "pos", tag="canon-back", delete_input=True)
    if path is None:
        out = ExternalSequence.create(device, PARTITION_DTYPE, "canonical")
    else:
        out = ExternalSequence.create(device, PARTITION_DTYPE, path=path, magic=PARTITION_MAGIC)
    for chunk in back.chunks(CHUNK):
        p = np.zeros(len(chunk), dtype=PARTITION_DTYPE)
        p["orig"] = chunk["orig"]
        p["bisim"] = chunk["canon"]
        out.append(p)
    back.delete()
    return out.finish()


def block_count(partition: ExternalSequence) -> int:
    """Number of distinct bisimIds (one sort)."""
    srt = external_sort(partition, "bisim", tag="count")
    k = 0
    prev = None
    for chunk in srt.chunks(CHUNK):
        start = changes(chunk, ("bisim",))
        if prev is not None and chunk["bisim"][0] == prev:
            start[0] = False
        prev = chunk["bisim"][-1]
        k += int(start.sum())
    srt.delete()
    return k


EQUAL = "equal"
P1_REFINES_P2 = "p1-refines-p2"
P2_REFINES_P1 = "p2-refines-p1"
INCOMPARABLE = "incomparable"

_PAIR = np.dtype([("b1", "<u8"), ("b2", "<u8")])


def compare(p1: ExternalSequence, p2: ExternalSequence) -> str:
    """Relation between two partitions of the same node set."""
    s1 = external_sort(p1, "orig", tag="cmp1")
    s2 = external_sort(p2, "orig", tag="cmp2")
    if len(s1) != len(s2):
        raise CoverageError(f"partitions cover {len(s1)} and {len(s2)} nodes")
    pairs = ExternalSequence.create(p1.device, _PAIR, "cmp-pairs")
    with s2.reader() as r2:
        for chunk in s1.chunks(CHUNK):
            c2 = r2.read_exact(len(chunk))
            if not np.array_equal(chunk["orig"], c2["orig"]):
                raise CoverageError("partitions cover different node sets")
            pr = np.zeros(len(chunk), dtype=_PAIR)
            pr["b1"] = chunk["bisim"]
            pr["b2"] = c2["bisim"]
            pairs.append(pr)
    s1.delete()
    s2.delete()
    pairs.finish()
    f1 = _functional(pairs, ("b1", "b2"))
    f2 = _functional(pairs, ("b2", "b1"))
    pairs.delete()
    if f1 and f2:
        return EQUAL
    if f1:
        return P1_REFINES_P2
    if f2:
        return P2_REFINES_P1
    return INCOMPARABLE


def _functional(pairs: ExternalSequence, key: tuple[str, str]) -> bool:
    """True if every ``key[0]`` value pairs with a single ``key[1]`` value."""
    srt = external_sort(pairs, key, tag="cmp-sorted")
    a, b = key
    prev = None
    ok = True
    for chunk in srt.chunks(CHUNK):
        if prev is not None:
            chunk = np.concatenate([prev, chunk])
        bad = (chunk[a][1:] == chunk[a][:-1]) & (chunk[b][1:] != chunk[b][:-1])
        if bad.any():
            ok = False
            break
        prev = chunk[-1:]
    srt.delete()
    return ok


# -- quotient --------------------------------------------------------------------

_NB = np.dtype([("bisim", "<u8"), ("label", "<u4"), ("pad", "<u4")])


@dataclass
class QuotientGraph:
    nodes: ExternalSequence
    edges: ExternalSequence

    def arrays(self):
        n = self.nodes.read_all()
        e = self.edges.read_all()
        return n["id"].copy(), n["label"].copy(), e["parent"].copy(), e["child"].copy()


def build_quotient(nodes: ExternalSequence, edges: ExternalSequence, partition: ExternalSequence,
                   *, nodes_path: str | None = None, edges_path: str | None = None) -> QuotientGraph:
    """One node per block labelled by its first member, deduplicated block edges.

    Block ids are taken from ``partition`` as is; edges come out sorted by
    child block.
    """
    device = nodes.device
    part = external_sort(partition, "orig", tag="q-part")
    nb = ExternalSequence.create(device, _NB, "q-nb")
    with nodes.reader() as nr:
        for chunk in part.chunks(CHUNK):
            nd = nr.read_exact(len(chunk))
            if len(nd) != len(chunk) or not np.array_equal(nd["id"], chunk["orig"]):
                part.delete()
                nb.delete()
                raise CoverageError("partition and node file cover different node sets")
            rec = np.zeros(len(chunk), dtype=_NB)
            rec["bisim"] = chunk["bisim"]
            rec["label"] = nd["label"]
            nb.append(rec)
        if not nr.exhausted():
            part.delete()
            nb.delete()
            raise CoverageError("node missing from partition")
    nb_sorted = external_sort(nb.finish(), "bisim", tag="q-nb", delete_input=True)
    if nodes_path is None:
        qn = ExternalSequence.create(device, NODE_REC, "q-nodes")
    else:
        qn = ExternalSequence.create(device, NODE_DTYPE, path=nodes_path, magic=NODE_MAGIC)
    prev = None
    for chunk in nb_sorted.chunks(CHUNK):
        start = changes(chunk, ("bisim",))
        if prev is not None and chunk["bisim"][0] == prev:
            start[0] = False
        prev = chunk["bisim"][-1]
        rec = np.zeros(int(start.sum()), dtype=qn.dtype)
        rec["id"] = chunk["bisim"][start]
        rec["label"] = chunk["label"][start]
        qn.append(rec)
    nb_sorted.delete()
    qn.finish()

    pmap = ExternalSequence.create(device, MAP_DTYPE, "q-map")
    for chunk in part.chunks(CHUNK):
        m = np.zeros(len(chunk), dtype=MAP_DTYPE)
        m["orig"] = chunk["orig"]
        m["new"] = chunk["bisim"]
        pmap.append(m)
    part.delete()
    pmap.finish()
    by_child = external_sort(edges, ("child", "parent"), tag="q-e")
    half = _rewrite(by_child, pmap, "child", "q-e1")
    by_child.delete()
    by_parent = external_sort(half, "parent", tag="q-e1p", delete_input=True)
    full = _rewrite(by_parent, pmap, "parent", "q-e2")
    by_parent.delete()
    pmap.delete()
    srt = external_sort(full, ("child", "parent"), tag="q-e2s", delete_input=True)
    if edges_path is None:
        qe = ExternalSequence.create(device, EDGE_DTYPE, "q-edges")
    else:
        qe = ExternalSequence.create(device, EDGE_DTYPE, path=edges_path, magic=EDGE_MAGIC)
    prev = None
    for chunk in srt.chunks(CHUNK):
        start = changes(chunk, ("child", "parent"))
        if prev is not None and chunk["child"][0] == prev[0] and chunk["parent"][0] == prev[1]:
            start[0] = False
        prev = (chunk["child"][-1], chunk["parent"][-1])
        qe.append(chunk[start])
    srt.delete()
    return QuotientGraph(qn, qe.finish())
