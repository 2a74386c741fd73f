"""Two-phase external-memory bisimulation partitioning of DAGs.

Phase 1 computes every node's rank (and optionally a structural hash) by
time-forward processing over the reverse topological order, sorts the nodes
by ``(rank, label[, hash])`` and renumbers them so that the new ids follow
that order. Phase 2 walks the renumbered nodes: each node receives its
children's block ids through the priority queue, nodes of one
``(rank, label[, hash])`` group are collated by family, every distinct family
gets a fresh block id, and that id is sent on to the parents.

Groups are collated as fixed-size records ``(secondHash, node, tag, value)``
so that a group larger than memory is just an external sort. Nodes whose
families differ but share a secondary hash are separated with a small
dictionary kept in a sequential file.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import _kernels
from .graphio import (
    CHUNK,
    EDGES_UNSORTED,
    ENDPOINT_MISSING,
    NODES_UNSORTED,
    ORDER_VIOLATED,
    PARTITION_DTYPE,
    PARTITION_MAGIC,
    RANKED_DTYPE,
    ValidationError,
    renumber,
    validate_input,
)
from .iomodel import (
    BlockDevice,
    ExternalPriorityQueue,
    ExternalSequence,
    IoStats,
    SpillBuffer,
    changes,
    external_sort,
    sort_records,
)

RANK_LABEL = "rank_label"
RANK_LABEL_HASH = "rank_label_hash"
VARIANTS = (RANK_LABEL, RANK_LABEL_HASH)

_MASK = (1 << 64) - 1
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


class InvariantError(RuntimeError):
    """Internal consistency check failed (a bug or corrupted intermediate file)."""


def mix64(x: int) -> int:
    x &= _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


def _fold(h: int, x: int) -> int:
    h = ((h ^ x) * _FNV_PRIME) & _MASK
    return h ^ (h >> 32)


def hash_combine(label: int, child_hashes) -> int:
    """Reference combiner: fold the label, then the sorted distinct child hashes."""
    h = _fold(_FNV_OFFSET, int(label))
    for c in sorted(set(int(x) for x in child_hashes)):
        h = _fold(h, c)
    return mix64(h)


CARD_BITS = 24
BODY_BITS = 40
_BODY_MASK = np.uint64((1 << BODY_BITS) - 1)
_CARD_MAX = (1 << CARD_BITS) - 1


def second_hash(values: np.ndarray, ptr: np.ndarray) -> np.ndarray:
    """Secondary hash of each family ``values[ptr[i]:ptr[i+1]]``.

    The cardinality sits in the top 24 bits, so families of different sizes
    below 2^24 never share a value; the low 40 bits hash the element set.
    """
    card = np.diff(ptr).astype(np.uint64)
    mixed = _kernels.mix64_array(values.astype(np.uint64))
    cs = np.zeros(len(values) + 1, dtype=np.uint64)
    np.cumsum(mixed, out=cs[1:])
    sums = cs[ptr[1:]] - cs[ptr[:-1]]
    body = _kernels.mix64_array(sums ^ card) & _BODY_MASK
    return (np.minimum(card, _CARD_MAX) << np.uint64(BODY_BITS)) | body


# -- phase 1 -------------------------------------------------------------------

PQ1_RL = np.dtype([("key", "<u8"), ("rank", "<u4"), ("pad", "<u4")])
PQ1_HASH = np.dtype(
    [("key", "<u8"), ("rank", "<u4"), ("pad", "<u4"), ("hash", "<u8"), ("pad2", "<u8")]
)


def _py_batch(labels, msg_ptr, msg_rank, msg_hash, in_ptr, in_child, hashed, combine):
    n = len(labels)
    rank = np.zeros(n, dtype=np.uint32)
    hsh = np.zeros(n, dtype=np.uint64)
    for i in range(n):
        r = 0
        kids = []
        for j in range(msg_ptr[i], msg_ptr[i + 1]):
            r = max(r, int(msg_rank[j]) + 1)
            kids.append(int(msg_hash[j]))
        for j in range(in_ptr[i], in_ptr[i + 1]):
            c = in_child[j]
            r = max(r, int(rank[c]) + 1)
            kids.append(int(hsh[c]))
        rank[i] = r
        if hashed:
            hsh[i] = combine(int(labels[i]), sorted(set(kids))) & _MASK
    return rank, hsh


def _positions(ids: np.ndarray, keys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pos = np.searchsorted(ids, keys)
    clipped = np.minimum(pos, len(ids) - 1)
    return clipped, ids[clipped] == keys


def compute_ranks(device: BlockDevice, nodes: ExternalSequence, edges: ExternalSequence, *,
                  hashed: bool = False, hash_combine: Callable | None = None,
                  batch_nodes: int = 1 << 16, batch_edges: int = 1 << 18) -> ExternalSequence:
    """Time-forward pass: one RankedNode record per node in id order (``id`` unset)."""
    dtype = PQ1_HASH if hashed else PQ1_RL
    out = ExternalSequence.create(device, RANKED_DTYPE, "ranks")
    pq = ExternalPriorityQueue(device, dtype, "key", budget_bytes=device.budget.free // 4,
                               name="phase1-pq")
    nr = nodes.reader()
    er = edges.reader()
    last_id = None
    last_child = None
    scratch = np.zeros(16, dtype=np.uint64)
    try:
        while True:
            nb = nr.next_chunk(batch_nodes)
            if not len(nb):
                break
            ids = nb["id"].astype(np.uint64)
            if np.any(ids[1:] <= ids[:-1]) or (last_id is not None and ids[0] <= last_id):
                raise ValidationError(f"{NODES_UNSORTED} near node id {int(ids[0])}")
            hi = int(ids[-1])
            eb = er.take_while("child", hi, limit=batch_edges)
            if len(eb) == batch_edges:
                c_last = int(eb["child"][-1])
                rest = er.take_while("child", c_last)
                if len(rest):
                    eb = np.concatenate([eb, rest])
                cut = int(np.searchsorted(ids, c_last, side="right"))
                if 0 < cut < len(nb):
                    nr.pushback(nb[cut:])
                    nb, ids = nb[:cut], ids[:cut]
                    hi = int(ids[-1])
            last_id = hi
            c = eb["child"]
            p = eb["parent"]
            if len(eb):
                if np.any(c[1:] < c[:-1]) or (last_child is not None and c[0] < last_child):
                    raise ValidationError(f"{EDGES_UNSORTED} near child {int(c[0])}")
                last_child = c[-1]
                bad = np.flatnonzero(p <= c)
                if len(bad):
                    i = int(bad[0])
                    raise ValidationError(
                        f"{ORDER_VIOLATED}: edge {int(p[i])} -> {int(c[i])}")
            cpos, ok = _positions(ids, c)
            if not ok.all():
                i = int(np.flatnonzero(~ok)[0])
                raise ValidationError(f"{ENDPOINT_MISSING}: child {int(c[i])} is not a node")

            msgs = pq.extract_until(hi, inclusive=True)
            mpos, ok = _positions(ids, msgs["key"])
            if not ok.all():
                k = int(msgs["key"][np.flatnonzero(~ok)[0]])
                raise ValidationError(f"{ENDPOINT_MISSING}: parent {k} is not a node")

            intra = p <= hi
            ppos, ok = _positions(ids, p[intra])
            if not ok.all():
                k = int(p[intra][np.flatnonzero(~ok)[0]])
                raise ValidationError(f"{ENDPOINT_MISSING}: parent {k} is not a node")
            n = len(ids)
            order = np.argsort(ppos, kind="stable")
            in_child = cpos[intra][order].astype(np.int64)
            in_ptr = np.zeros(n + 1, dtype=np.int64)
            np.cumsum(np.bincount(ppos, minlength=n), out=in_ptr[1:])
            msg_ptr = np.searchsorted(mpos, np.arange(n + 1)).astype(np.int64)
            msg_rank = msgs["rank"]
            msg_hash = msgs["hash"] if hashed else np.zeros(len(msgs), dtype=np.uint64)
            labels = nb["label"].astype(np.uint64)
            if hash_combine is not None and hashed:
                rank, hsh = _py_batch(labels, msg_ptr, msg_rank, msg_hash, in_ptr, in_child,
                                      hashed, hash_combine)
            else:
                if hashed:
                    need = int(np.max(np.diff(msg_ptr) + np.diff(in_ptr))) if n else 0
                    if need > len(scratch):
                        scratch = np.zeros(max(need, 2 * len(scratch)), dtype=np.uint64)
                rank, hsh = _kernels.phase1_batch(labels, msg_ptr, msg_rank, msg_hash, in_ptr,
                                                  in_child, hashed, scratch)

            ext = ~intra
            if ext.any():
                m = np.zeros(int(ext.sum()), dtype=dtype)
                m["key"] = p[ext]
                src = cpos[ext]
                m["rank"] = rank[src]
                if hashed:
                    m["hash"] = hsh[src]
                pq.insert_many(m)

            rec = np.zeros(n, dtype=RANKED_DTYPE)
            rec["orig"] = ids
            rec["rank"] = rank
            rec["label"] = nb["label"]
            rec["hash"] = hsh
            out.append(rec)

        rest = er.next_chunk(1)
        if len(rest):
            raise ValidationError(f"{ENDPOINT_MISSING}: child {int(rest['child'][0])} is not a node")
        if len(pq):
            k = pq.peek_min_key()
            raise ValidationError(f"{ENDPOINT_MISSING}: parent {k} is not a node")
    except BaseException:
        out.delete()
        raise
    finally:
        nr.close()
        er.close()
        pq.close()
    return out.finish()


def phase1(device: BlockDevice, nodes: ExternalSequence, edges: ExternalSequence, *,
           variant: str = RANK_LABEL, hash_combine: Callable | None = None
           ) -> tuple[ExternalSequence, ExternalSequence]:
    """Ranks, optional hashes, sort, renumber. Returns ``(nodes', edges')``."""
    hashed = _check_variant(variant) == RANK_LABEL_HASH
    ranks = compute_ranks(device, nodes, edges, hashed=hashed, hash_combine=hash_combine)
    key = ("rank", "label", "hash") if hashed else ("rank", "label")
    ordered = external_sort(ranks, key, tag="ranks-sorted", delete_input=True)
    new_nodes, new_edges, mapping = renumber(ordered, edges)
    ordered.delete()
    mapping.delete()
    return new_nodes, new_edges


def phase1_rank_label(device, nodes, edges):
    return phase1(device, nodes, edges, variant=RANK_LABEL)


def phase1_hashed(device, nodes, edges, hash_combine: Callable | None = None):
    return phase1(device, nodes, edges, variant=RANK_LABEL_HASH, hash_combine=hash_combine)


# -- phase 2 -------------------------------------------------------------------

PQ2 = np.dtype([("key", "<u8"), ("bisim", "<u8")])
GROUP_DTYPE = np.dtype(
    [("sh", "<u8"), ("node", "<u8"), ("group", "<u4"), ("tag", "<u4"), ("value", "<u8")]
)
GROUP_KEY = ("group", "sh", "node", "tag", "value")
TAG_NODE, TAG_CHILD, TAG_PARENT = 0, 1, 2


class CollisionDictionary:
    """Family -> bisimId entries in a sequential file, found by linear scan.

    Entries are u64 words ``[bisimId, length, elements...]``.
    """

    def __init__(self, device: BlockDevice):
        self.device = device
        self.path = device.temp_path("collisions")
        self._fh = device.open(self.path, "w+b")
        self._size = 0
        self.entries = 0

    def erase(self) -> None:
        self._fh.truncate(0)
        self._size = 0
        self.entries = 0

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None
            os.remove(self.path)

    def add(self, family: np.ndarray, bisim_id: int) -> None:
        words = np.concatenate([[bisim_id, len(family)], family]).astype("<u8")
        self.device.pwrite(self._fh, words.tobytes(), self._size, self.path)
        self._size += words.nbytes
        self.entries += 1

    def find(self, family: np.ndarray) -> int | None:
        if not self._size:
            return None
        B = self.device.block_size
        n = len(family)
        carry = np.zeros(0, dtype="<u8")
        off = 0
        while off < self._size:
            raw = self.device.pread(self._fh, min(B, self._size - off), off, self.path)
            off += len(raw)
            words = np.concatenate([carry, np.frombuffer(raw, dtype="<u8")])
            i = 0
            while i + 2 <= len(words):
                length = int(words[i + 1])
                if i + 2 + length > len(words):
                    break
                if length == n and np.array_equal(words[i + 2:i + 2 + length], family):
                    return int(words[i])
                i += 2 + length
            carry = words[i:]
        return None


@dataclass
class _Carry:
    group: int = -1
    sh: int = -1
    family: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.uint64))
    bisim: int = 0
    dictionary: bool = False


class FamilyAssigner:
    """Assigns block ids to nodes streamed in ``GROUP_KEY`` order.

    Input arrays must consist of whole nodes (a marker followed by its family
    and parent records). Consecutive nodes of one ``(group, secondHash)`` run
    with equal families share an id; a run in which the family changes is
    resolved through the collision dictionary.
    """

    def __init__(self, device: BlockDevice):
        self.device = device
        self.next_id = 0
        self.collisions = 0
        self.slow_nodes = 0
        self.carry = _Carry()
        self.dictionary = CollisionDictionary(device)

    def close(self) -> None:
        self.dictionary.close()

    def assign(self, recs: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Returns ``(orig ids, bisim ids, messages)`` for the nodes in ``recs``."""
        tag = recs["tag"]
        is_m = tag == TAG_NODE
        if not len(recs) or not is_m[0]:
            raise InvariantError("group records do not start with a node marker")
        node_of = np.cumsum(is_m) - 1
        marks = recs[is_m]
        m = len(marks)
        fsel = tag == TAG_CHILD
        fam = recs["value"][fsel]
        fam_node = node_of[fsel]
        cnt = np.bincount(fam_node, minlength=m)
        ptr = np.zeros(m + 1, dtype=np.int64)
        np.cumsum(cnt, out=ptr[1:])

        g = marks["group"].astype(np.int64)
        sh = marks["sh"]
        c = self.carry
        run_start = np.ones(m, dtype=bool)
        run_start[1:] = (g[1:] != g[:-1]) | (sh[1:] != sh[:-1])
        run_start[0] = not (g[0] == c.group and int(sh[0]) == c.sh)

        same = np.zeros(m, dtype=bool)
        if m > 1:
            eqlen = cnt[1:] == cnt[:-1]
            shift = np.repeat(ptr[1:-1] - ptr[:-2], cnt[1:])
            idx = np.arange(ptr[1], ptr[-1])
            diff = fam[idx] != fam[idx - shift] if len(idx) else np.zeros(0, dtype=bool)
            mism = np.bincount(fam_node[idx], weights=diff, minlength=m)[1:] if len(idx) \
                else np.zeros(m - 1)
            same[1:] = eqlen & (mism == 0)
        first = fam[ptr[0]:ptr[1]]
        same[0] = len(first) == len(c.family) and np.array_equal(first, c.family)

        slow = ~run_start & ~same
        if slow.any():
            ids = self._assign_slow(g, sh, fam, ptr)
        else:
            seq = np.cumsum(run_start)
            ids = np.where(seq == 0, c.bisim, self.next_id + seq).astype(np.uint64)
            self.next_id += int(run_start.sum())
            if run_start.any():
                c.dictionary = False
        c.group = int(g[-1])
        c.sh = int(sh[-1])
        c.family = fam[ptr[-2]:ptr[-1]].copy()
        c.bisim = int(ids[-1])

        psel = tag == TAG_PARENT
        msgs = np.zeros(int(psel.sum()), dtype=PQ2)
        msgs["key"] = recs["value"][psel]
        msgs["bisim"] = ids[node_of[psel]]
        return marks["value"], ids, msgs

    def _assign_slow(self, g, sh, fam, ptr) -> np.ndarray:
        c = self.carry
        d = self.dictionary
        m = len(g)
        ids = np.zeros(m, dtype=np.uint64)
        cur = (c.group, c.sh)
        prev_fam, prev_id = c.family, c.bisim
        in_dict = c.dictionary
        self.slow_nodes += m
        for i in range(m):
            key = (int(g[i]), int(sh[i]))
            f = fam[ptr[i]:ptr[i + 1]]
            if key != cur:
                cur = key
                d.erase()
                in_dict = True
                found = None
            else:
                if not in_dict:
                    d.erase()
                    d.add(prev_fam, prev_id)
                    in_dict = True
                found = d.find(f)
            if found is None:
                if d.entries:
                    self.collisions += 1
                self.next_id += 1
                found = self.next_id
                d.add(f, found)
            ids[i] = found
            prev_fam, prev_id = f, found
        c.dictionary = in_dict
        return ids


class GroupStage:
    """Collects group records of one rank and assigns ids group by group.

    Complete groups are collated in memory. A group that alone outgrows the
    share is appended to a spill file and externally sorted when it closes.
    """

    def __init__(self, device: BlockDevice, capacity_bytes: int, assigner: FamilyAssigner, sink):
        self.device = device
        self.capacity = max(1, capacity_bytes // GROUP_DTYPE.itemsize)
        self.capacity_bytes = capacity_bytes
        self.assigner = assigner
        self.sink = sink
        self._parts: list[np.ndarray] = []
        self._count = 0
        self._spill: SpillBuffer | None = None
        self._spill_group = -1
        self.spilled_bytes = 0
        self.spilled_groups = 0

    def add(self, recs: np.ndarray, open_group: int) -> None:
        if self._spill is not None:
            mine = recs["group"] == self._spill_group
            if mine.any():
                self._spill.append(recs[mine])
                recs = recs[~mine]
            if open_group != self._spill_group:
                self._finish_spill()
        if len(recs):
            self._parts.append(recs)
            self._count += len(recs)
        if self._count > self.capacity:
            self._process_before(open_group)
            if self._count > self.capacity // 2 and self._spill is None:
                self._spill = SpillBuffer(self.device, GROUP_DTYPE, self.capacity_bytes,
                                          "group-spill")
                self._spill_group = open_group
                for p in self._parts:
                    self._spill.append(p)
                self._spill.spill()
                self._parts = []
                self._count = 0
                self.spilled_groups += 1

    def flush(self) -> None:
        if self._spill is not None:
            self._finish_spill()
        self._process_before(None)

    def _process_before(self, open_group) -> None:
        if not self._parts:
            return
        recs = np.concatenate(self._parts) if len(self._parts) > 1 else self._parts[0]
        if open_group is not None:
            keep = recs["group"] == open_group
            done = recs[~keep]
            recs = recs[keep]
        else:
            done, recs = recs, recs[:0]
        self._parts = [recs] if len(recs) else []
        self._count = len(recs)
        if len(done):
            self.sink(*self.assigner.assign(sort_records(done, GROUP_KEY)))

    def _finish_spill(self) -> None:
        spill = self._spill
        self._spill = None
        self.spilled_bytes += spill.spilled_bytes
        held = None
        for chunk in spill.sorted_chunks(GROUP_KEY):
            if held is not None:
                chunk = np.concatenate([held, chunk])
            marks = np.flatnonzero(chunk["tag"] == TAG_NODE)
            cut = int(marks[-1])
            held = chunk[cut:]
            if cut:
                self.sink(*self.assigner.assign(chunk[:cut]))
        if held is not None and len(held):
            self.sink(*self.assigner.assign(held))


@dataclass
class Phase2Result:
    partition: ExternalSequence
    blocks: int
    collisions: int
    group_spill_bytes: int
    spilled_groups: int


def phase2(device: BlockDevice, nodes: ExternalSequence, edges: ExternalSequence, *,
           hashed: bool = False, second_hash_fn: Callable = second_hash,
           chunk_nodes: int = 1 << 15) -> Phase2Result:
    """Block ids for renumbered nodes; output is ``(origId, bisimId)`` in new-id order."""
    share = device.budget.free // 4
    pq = ExternalPriorityQueue(device, PQ2, "key", budget_bytes=share, name="phase2-pq")
    assigner = FamilyAssigner(device)
    out = ExternalSequence.create(device, PARTITION_DTYPE, "phase2-out")

    def sink(orig, ids, msgs):
        rec = np.zeros(len(orig), dtype=PARTITION_DTYPE)
        rec["orig"] = orig
        rec["bisim"] = ids
        out.append(rec)
        pq.insert_many(msgs)

    stage = GroupStage(device, share, assigner, sink)
    gkey = ("rank", "label", "hash") if hashed else ("rank", "label")
    device.budget.reserve("group-buffer", share)
    nr = nodes.reader()
    er = edges.reader()
    group = -1
    prev_key = None
    expected_id = 1
    try:
        while True:
            head = nr.peek()
            if head is None:
                break
            r = int(head["rank"])
            chunk = nr.take_while("rank", r, limit=chunk_nodes)
            ids = chunk["id"]
            n = len(ids)
            if int(ids[0]) != expected_id or int(ids[-1]) != expected_id + n - 1:
                raise InvariantError("renumbered node ids are not consecutive")
            expected_id += n
            base = int(ids[0])
            last = int(ids[-1])

            msgs = pq.extract_until(last, inclusive=True)
            if len(msgs) and int(msgs["key"][0]) < base:
                raise InvariantError("message addressed to an already processed node")
            order = np.lexsort((msgs["bisim"], msgs["key"]))
            msgs = msgs[order]
            keep = changes(msgs, ("key", "bisim"))
            msgs = msgs[keep]
            fpos = (msgs["key"] - np.uint64(base)).astype(np.int64)
            fptr = np.zeros(n + 1, dtype=np.int64)
            np.cumsum(np.bincount(fpos, minlength=n), out=fptr[1:])
            sh = second_hash_fn(msgs["bisim"], fptr)

            pe = er.take_while("child", last)
            if len(pe) and int(pe["child"][0]) < base:
                raise InvariantError("edge stream out of step with the node stream")
            ppos = (pe["child"] - np.uint64(base)).astype(np.int64)

            start = changes(chunk, gkey)
            if prev_key is not None and tuple(int(chunk[f][0]) for f in gkey) == prev_key:
                start[0] = False
            grp = group + np.cumsum(start)
            if grp[-1] >= 1 << 32:
                raise OverflowError("more than 2^32 groups")
            group = int(grp[-1])
            prev_key = tuple(int(chunk[f][-1]) for f in gkey)

            nf, npar = len(msgs), len(pe)
            recs = np.zeros(n + nf + npar, dtype=GROUP_DTYPE)
            recs["sh"][:n] = sh
            recs["node"][:n] = ids
            recs["group"][:n] = grp
            recs["value"][:n] = chunk["orig"]
            f = recs[n:n + nf]
            f["sh"] = sh[fpos]
            f["node"] = msgs["key"]
            f["group"] = grp[fpos]
            f["tag"] = TAG_CHILD
            f["value"] = msgs["bisim"]
            q = recs[n + nf:]
            q["sh"] = sh[ppos]
            q["node"] = pe["child"]
            q["group"] = grp[ppos]
            q["tag"] = TAG_PARENT
            q["value"] = pe["parent"]
            stage.add(recs, group)

            nxt = nr.peek()
            if nxt is None or int(nxt["rank"]) != r:
                stage.flush()
        stage.flush()
        if len(pq):
            raise InvariantError(f"{len(pq)} messages left in the queue after the last node")
        if len(er.next_chunk(1)):
            raise InvariantError("edges left after the last node")
        if expected_id - 1 != len(nodes):
            raise InvariantError("node stream ended early")
    except BaseException:
        out.delete()
        raise
    finally:
        nr.close()
        er.close()
        pq.close()
        assigner.close()
        device.budget.release("group-buffer")
    return Phase2Result(out.finish(), assigner.next_id, assigner.collisions,
                        stage.spilled_bytes, stage.spilled_groups)


# -- driver ----------------------------------------------------------------------

@dataclass
class DagResult:
    partition: ExternalSequence
    blocks: int
    collisions: int
    group_spill_bytes: int
    phase_stats: dict[str, IoStats]
    total: IoStats
    nodes: int
    edges: int
    variant: str

    def io_per_element(self) -> float:
        return self.total.total / max(1, self.nodes + self.edges)


def _check_variant(variant: str) -> str:
    v = variant.replace("-", "_")
    if v not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    return v


def partition_dag(device: BlockDevice, nodes: ExternalSequence, edges: ExternalSequence,
                  variant: str = RANK_LABEL, *, out_path: str | None = None,
                  validate: bool = False, hash_combine: Callable | None = None,
                  second_hash_fn: Callable = second_hash) -> DagResult:
    """Bisimulation partition of a DAG whose nodes are numbered children first.

    Returns the partition sorted by origId (written to ``out_path`` when
    given) together with per-phase IO counts.
    """
    variant = _check_variant(variant)
    hashed = variant == RANK_LABEL_HASH
    start = device.stats.copy()
    phases: dict[str, IoStats] = {}
    mark = device.stats.copy()

    def lap(name):
        nonlocal mark
        phases[name] = device.stats - mark
        mark = device.stats.copy()

    if validate:
        with device.phase("validate"):
            validate_input(nodes, edges).raise_if_invalid()
        lap("validate")
    with device.phase("phase1"):
        n1, e1 = phase1(device, nodes, edges, variant=variant, hash_combine=hash_combine)
    lap("phase1")
    with device.phase("phase2"):
        res = phase2(device, n1, e1, hashed=hashed, second_hash_fn=second_hash_fn)
    n1.delete()
    e1.delete()
    lap("phase2")
    with device.phase("output"):
        final = external_sort(res.partition, "orig", tag="partition", path=out_path,
                              magic=PARTITION_MAGIC if out_path else None, delete_input=True)
    lap("output")
    return DagResult(final, res.blocks, res.collisions, res.group_spill_bytes, phases,
                     device.stats - start, len(nodes), len(edges), variant)
