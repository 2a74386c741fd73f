"""Structural indexes of XML documents: 1-index, A(k)-index and F&B-index.

Documents are read as a stream of element start/end events. Nodes get
composite ids ``(depth, idOnLevel)``; ordering by these ids processes a tree
level by level, so a node's only "child" in the backward sense (its parent)
is always finished before the node itself.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Iterator, NamedTuple
from xml.parsers import expat

import numpy as np

from .bisim import InvariantError, RANK_LABEL, partition_dag
from .graphio import (
    CHUNK,
    EDGE_DTYPE,
    NODE_REC,
    PARTITION_DTYPE,
    PARTITION_MAGIC,
    LabelTable,
    SortedLookup,
)
from .iomodel import (
    BlockCachedArray,
    BlockDevice,
    ExternalPriorityQueue,
    ExternalSequence,
    IoStats,
    SpillBuffer,
    changes,
    external_sort,
)

LAMBDA = 0
READ_SIZE = 1 << 20
EVENT_CHUNK = 1 << 16


class XmlParseError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at byte {offset}")
        self.offset = offset


class TagEvent(NamedTuple):
    kind: str
    label: int
    orig: int | None


class EventChunk(NamedTuple):
    start: np.ndarray   # bool per event
    label: np.ndarray   # u4 label code per event


def _open(source):
    if isinstance(source, (bytes, bytearray)):
        return io.BytesIO(source), True
    if isinstance(source, str):
        return open(source, "rb"), True
    return source, False


def event_chunks(source, labels: LabelTable, chunk_events: int | None = None
                 ) -> Iterator[EventChunk]:
    """Element start/end events in document order, in array chunks.

    ``source`` is a path, a bytes object or a binary file. Text, attributes,
    comments and processing instructions are skipped.
    """
    chunk_events = chunk_events or EVENT_CHUNK
    parser = expat.ParserCreate()
    starts: list[bool] = []
    labs: list[int] = []
    intern = labels.intern

    def on_start(name, attrs):
        starts.append(True)
        labs.append(intern(name))

    def on_end(name):
        starts.append(False)
        labs.append(intern(name))

    parser.StartElementHandler = on_start
    parser.EndElementHandler = on_end
    fh, owned = _open(source)

    def drain():
        chunk = EventChunk(np.array(starts, dtype=bool), np.array(labs, dtype=np.uint32))
        starts.clear()
        labs.clear()
        return chunk

    try:
        while True:
            data = fh.read(READ_SIZE)
            try:
                parser.Parse(data, not data)
            except expat.ExpatError as exc:
                raise XmlParseError(expat.errors.messages[exc.code], parser.ErrorByteIndex) from None
            while len(starts) >= chunk_events:
                whole = drain()
                for lo in range(0, len(whole.start), chunk_events):
                    yield EventChunk(whole.start[lo:lo + chunk_events],
                                     whole.label[lo:lo + chunk_events])
            if not data:
                break
        if starts:
            yield drain()
    finally:
        if owned:
            fh.close()


def scan_xml(source, labels: LabelTable | None = None) -> Iterator[TagEvent]:
    """Per-event view: ``TagEvent('start', label, preorder id)`` / ``('end', label, None)``."""
    labels = labels if labels is not None else LabelTable()
    orig = 0
    for chunk in event_chunks(source, labels):
        for s, lab in zip(chunk.start.tolist(), chunk.label.tolist()):
            if s:
                yield TagEvent("start", lab, orig)
                orig += 1
            else:
                yield TagEvent("end", lab, None)


# -- tree walk -------------------------------------------------------------------

@dataclass
class StartBatch:
    orig: np.ndarray
    depth: np.ndarray
    label: np.ndarray
    id_on_level: np.ndarray
    parent_id_on_level: np.ndarray   # meaningless at depth 0
    parent_orig: np.ndarray          # -1 at depth 0
    trace: np.ndarray | None         # (n, k+1) label codes


class TreeWalker:
    """Per-depth state of a document scan kept on the device.

    ``count[d]`` is the number of elements seen at depth d, ``path_orig[d]``
    and ``path_label[d]`` describe the open element at depth d. Each event
    chunk touches a window of depths around the current one.
    """

    def __init__(self, device: BlockDevice, *, trace_k: int | None = None, need_parent: bool = True):
        self.device = device
        self.count = BlockCachedArray(device, np.uint64, tag="count")
        self.path_orig = BlockCachedArray(device, np.uint64, tag="path-orig") if need_parent else None
        self.path_label = BlockCachedArray(device, np.uint64, tag="path-label") \
            if trace_k is not None else None
        self.k = trace_k
        self.depth = 0
        self.next_orig = 0
        self.roots = 0
        self.max_depth = -1

    def close(self):
        for a in (self.count, self.path_orig, self.path_label):
            if a is not None:
                a.close()

    def feed(self, chunk: EventChunk) -> StartBatch:
        st = chunk.start
        L = len(st)
        delta = np.where(st, 1, -1).astype(np.int64)
        open_after = self.depth + np.cumsum(delta)
        if len(open_after) and open_after.min() < 0:
            raise XmlParseError("end tag without matching start", -1)
        s = np.flatnonzero(st)
        d = open_after[s] - 1
        n = len(s)
        self.roots += int(np.count_nonzero(d == 0))
        self.depth = int(open_after[-1]) if L else self.depth
        orig = np.arange(self.next_orig, self.next_orig + n, dtype=np.uint64)
        self.next_orig += n
        labels = chunk.label[s].astype(np.uint64)
        if n == 0:
            z = np.zeros(0, dtype=np.uint64)
            return StartBatch(z, z.astype(np.int64), z, z, z, z.astype(np.int64),
                              np.zeros((0, (self.k or 0) + 1), dtype=np.uint64) if self.k is not None else None)
        self.max_depth = max(self.max_depth, int(d.max()))

        # starts ordered by (depth, position); parent = last start one level up before me
        order = np.argsort(d, kind="stable")
        span = L + 1
        keys = d[order] * span + s[order]
        own = np.searchsorted(keys, d * span + s)
        group_lo = np.searchsorted(keys, d * span)
        pos_in_level = own - group_lo
        up_lo = np.searchsorted(keys, (d - 1) * span)
        up_q = np.searchsorted(keys, (d - 1) * span + s)
        has_parent_here = (up_q > up_lo) & (d > 0)
        parent_idx = np.where(has_parent_here, order[np.maximum(up_q - 1, 0)], -1)

        dmin, dmax = int(d.min()), int(d.max())
        lo = max(0, dmin - max(1, self.k or 0))
        cnt0 = self.count.get_range(lo, dmax + 1)
        idol = cnt0[d - lo] + pos_in_level.astype(np.uint64)
        pidol = np.zeros(n, dtype=np.uint64)
        outside = (~has_parent_here) & (d > 0)
        pidol[has_parent_here] = idol[parent_idx[has_parent_here]]
        pidol[outside] = cnt0[d[outside] - 1 - lo] - np.uint64(1)

        porig = np.full(n, -1, dtype=np.int64)
        if self.path_orig is not None:
            po0 = self.path_orig.get_range(lo, dmax + 1)
            porig[has_parent_here] = orig[parent_idx[has_parent_here]].astype(np.int64)
            porig[outside] = po0[d[outside] - 1 - lo].astype(np.int64)

        trace = None
        if self.k is not None:
            k = self.k
            pl0 = self.path_label.get_range(lo, dmax + 1)
            trace = np.full((n, k + 1), LAMBDA, dtype=np.uint64)
            trace[:, k] = labels
            anc = parent_idx.copy()
            inside = anc >= 0
            for t in range(1, k + 1):
                at = d - t
                col = np.full(n, LAMBDA, dtype=np.uint64)
                col[inside] = labels[anc[inside]]
                out = (~inside) & (at >= 0)
                col[out] = pl0[at[out] - lo]
                trace[:, k - t] = col
                nxt = np.full(n, -1, dtype=np.int64)
                nxt[inside] = parent_idx[anc[inside]]
                anc = nxt
                inside = anc >= 0

        # write back per-depth state
        levels, first_in_level, level_sizes = np.unique(d, return_index=True, return_counts=True)
        last_in_level = order[np.searchsorted(keys, (levels + 1) * span) - 1]
        cnt = cnt0.copy()
        cnt[levels - lo] += level_sizes.astype(np.uint64)
        self.count.set_range(lo, cnt)
        if self.path_orig is not None:
            po0[levels - lo] = orig[last_in_level]
            self.path_orig.set_range(lo, po0)
        if self.path_label is not None:
            pl0[levels - lo] = labels[last_in_level]
            self.path_label.set_range(lo, pl0)
        return StartBatch(orig, d, labels, idol, pidol, porig, trace)

    def finish(self) -> None:
        if self.depth != 0:
            raise XmlParseError("unclosed element at end of document", -1)
        if self.next_orig == 0:
            raise XmlParseError("document has no element", 0)
        if self.roots != 1:
            raise XmlParseError("document must have exactly one root element", -1)


# -- 1-index -------------------------------------------------------------------

XNODE = np.dtype([("rank", "<u4"), ("idol", "<u8"), ("orig", "<u8"), ("label", "<u8"),
                  ("pad", "<u4")])
XEDGE = np.dtype([("prank", "<u4"), ("pid", "<u8"), ("cid", "<u8"), ("pad", "<u4"),
                  ("pad2", "<u8")])
XMSG = np.dtype([("rank", "<u4"), ("idol", "<u8"), ("pbid", "<u8"), ("pad", "<u4"),
                 ("pad2", "<u8")])
XGROUP = np.dtype([("label", "<u8"), ("pbid", "<u8"), ("value", "<u8"), ("pad", "<u8")])
_MARK = np.uint64(1 << 63)
TREE_DTYPE = np.dtype([("orig", "<u8"), ("parent", "<i8"), ("label", "<u8"), ("pad", "<u8")])


@dataclass
class OneIndexInput:
    nodes: ExternalSequence   # XNODE sorted by (rank, idol)
    edges: ExternalSequence   # XEDGE sorted by (prank, pid, cid)
    count: int
    max_depth: int
    tree: ExternalSequence | None = None   # TREE_DTYPE in preorder

    def delete(self):
        for s in (self.nodes, self.edges, self.tree):
            if s is not None:
                s.delete()


def oneindex_phase1(device: BlockDevice, source, labels: LabelTable | None = None, *,
                    keep_tree: bool = False) -> OneIndexInput:
    """Depth-composite ids for every element plus parent-to-child edges."""
    labels = labels if labels is not None else LabelTable()
    walker = TreeWalker(device, need_parent=keep_tree)
    nseq = ExternalSequence.create(device, XNODE, "x-nodes")
    eseq = ExternalSequence.create(device, XEDGE, "x-edges")
    tseq = ExternalSequence.create(device, TREE_DTYPE, "x-tree") if keep_tree else None
    try:
        for chunk in event_chunks(source, labels):
            b = walker.feed(chunk)
            if not len(b.orig):
                continue
            rec = np.zeros(len(b.orig), dtype=XNODE)
            rec["rank"] = b.depth
            rec["idol"] = b.id_on_level
            rec["orig"] = b.orig
            rec["label"] = b.label
            nseq.append(rec)
            nz = b.depth > 0
            e = np.zeros(int(nz.sum()), dtype=XEDGE)
            e["prank"] = b.depth[nz] - 1
            e["pid"] = b.parent_id_on_level[nz]
            e["cid"] = b.id_on_level[nz]
            eseq.append(e)
            if tseq is not None:
                t = np.zeros(len(b.orig), dtype=TREE_DTYPE)
                t["orig"] = b.orig
                t["parent"] = b.parent_orig
                t["label"] = b.label
                tseq.append(t)
        walker.finish()
    except BaseException:
        for s in (nseq, eseq, tseq):
            if s is not None:
                s.delete()
        raise
    finally:
        walker.close()
    nodes = external_sort(nseq.finish(), ("rank", "idol"), tag="x-nodes-sorted", delete_input=True)
    edges = external_sort(eseq.finish(), ("prank", "pid", "cid"), tag="x-edges-sorted",
                          delete_input=True)
    return OneIndexInput(nodes, edges, walker.next_orig, walker.max_depth,
                         tseq.finish() if tseq is not None else None)


@dataclass
class Phase2Out:
    partition: ExternalSequence   # (orig, bisim) sorted by orig
    blocks: int


def oneindex_phase2(device: BlockDevice, inp: OneIndexInput, *, out_path: str | None = None,
                    chunk_nodes: int = 1 << 15) -> Phase2Out:
    """Level-by-level assignment: equal (label, parent block) means equal block."""
    share = device.budget.free // 4
    pq = ExternalPriorityQueue(device, XMSG, ("rank", "idol"), budget_bytes=share, name="x-pq")
    out = ExternalSequence.create(device, PARTITION_DTYPE, "x-assign")
    nr = inp.nodes.reader()
    er = inp.edges.reader()
    next_id = 0
    try:
        pq.insert((0, 0), (0, 0, 0))
        while True:
            head = nr.peek()
            if head is None:
                break
            r = int(head["rank"])
            group = SpillBuffer(device, XGROUP, share, "x-group")
            while True:
                chunk = nr.take_while("rank", r, limit=chunk_nodes)
                if not len(chunk):
                    break
                last = (r, int(chunk["idol"][-1]))
                msgs = pq.extract_until(last, inclusive=True)
                if len(msgs) != len(chunk) or not (
                        np.array_equal(msgs["idol"], chunk["idol"]) and np.all(msgs["rank"] == r)):
                    raise InvariantError("queue and node stream are out of step")
                kids = er.take_while(("prank", "pid"), last)
                pos = np.searchsorted(chunk["idol"], kids["pid"])
                if len(kids) and (np.any(kids["prank"] != r) or np.any(pos >= len(chunk))
                                  or not np.array_equal(chunk["idol"][np.minimum(pos, len(chunk) - 1)], kids["pid"])):
                    raise InvariantError("edge stream is out of step with the node stream")
                g = np.zeros(len(chunk) + len(kids), dtype=XGROUP)
                n = len(chunk)
                g["label"][:n] = chunk["label"]
                g["pbid"][:n] = msgs["pbid"]
                g["value"][:n] = chunk["orig"] | _MARK
                g["label"][n:] = chunk["label"][pos]
                g["pbid"][n:] = msgs["pbid"][pos]
                g["value"][n:] = kids["cid"]
                group.append(g)
            prev = None
            for srt in group.sorted_chunks(("label", "pbid")):
                start = changes(srt, ("label", "pbid"))
                if prev is not None and (int(srt["label"][0]), int(srt["pbid"][0])) == prev:
                    start[0] = False
                ids = next_id + np.cumsum(start).astype(np.uint64)
                next_id = int(ids[-1])
                prev = (int(srt["label"][-1]), int(srt["pbid"][-1]))
                mark = (srt["value"] & _MARK) != 0
                a = np.zeros(int(mark.sum()), dtype=PARTITION_DTYPE)
                a["orig"] = srt["value"][mark] & ~_MARK
                a["bisim"] = ids[mark]
                out.append(a)
                m = np.zeros(int((~mark).sum()), dtype=XMSG)
                m["rank"] = r + 1
                m["idol"] = srt["value"][~mark]
                m["pbid"] = ids[~mark]
                pq.insert_many(m)
        if len(pq):
            raise InvariantError(f"{len(pq)} messages left in the queue")
        if len(er.next_chunk(1)):
            raise InvariantError("edges left after the last node")
    except BaseException:
        out.delete()
        raise
    finally:
        nr.close()
        er.close()
        pq.close()
    part = external_sort(out.finish(), "orig", tag="x-partition", path=out_path,
                         magic=PARTITION_MAGIC if out_path else None, delete_input=True)
    return Phase2Out(part, next_id)


@dataclass
class XmlResult:
    partition: ExternalSequence
    blocks: int
    nodes: int
    phase_stats: dict[str, IoStats]
    total: IoStats
    mode: str
    k: int | None = None
    max_depth: int = 0


class _Laps:
    def __init__(self, device):
        self.device = device
        self.start = device.stats.copy()
        self.mark = self.start
        self.phases: dict[str, IoStats] = {}

    def lap(self, name):
        now = self.device.stats.copy()
        self.phases[name] = now - self.mark
        self.mark = now

    def total(self):
        return self.device.stats - self.start


def one_index(device: BlockDevice, source, *, labels: LabelTable | None = None,
              out_path: str | None = None) -> XmlResult:
    laps = _Laps(device)
    with device.phase("phase1"):
        inp = oneindex_phase1(device, source, labels)
    laps.lap("phase1")
    with device.phase("phase2"):
        res = oneindex_phase2(device, inp, out_path=out_path)
    inp.delete()
    laps.lap("phase2")
    return XmlResult(res.partition, res.blocks, inp.count, laps.phases, laps.total(), "1index",
                     max_depth=inp.max_depth)


# -- A(k) ------------------------------------------------------------------------

def _trace_dtype(k: int) -> np.dtype:
    fields = [(f"t{i}", "<u4") for i in range(k + 1)] + [("orig", "<u8")]
    width = 4 * (k + 1) + 8
    size = 16
    while size < width:
        size *= 2
    if size > width:
        fields.append(("pad", f"V{size - width}"))
    return np.dtype(fields)


def ak_index(device: BlockDevice, source, k: int, *, labels: LabelTable | None = None,
             out_path: str | None = None) -> XmlResult:
    """Group elements by the last k+1 labels of their root path."""
    if k < 0:
        raise ValueError("k must be non-negative")
    labels = labels if labels is not None else LabelTable()
    dt = _trace_dtype(k)
    if device.block_size % dt.itemsize:
        raise ValueError(f"k={k} gives {dt.itemsize}-byte traces, wider than the block size")
    key = tuple(f"t{i}" for i in range(k + 1))
    laps = _Laps(device)
    walker = TreeWalker(device, trace_k=k, need_parent=False)
    seq = ExternalSequence.create(device, dt, "traces")
    with device.phase("phase1"):
        try:
            for chunk in event_chunks(source, labels):
                b = walker.feed(chunk)
                if not len(b.orig):
                    continue
                if b.trace.max(initial=0) >= 1 << 32:
                    raise OverflowError("label codes must fit in 32 bits")
                rec = np.zeros(len(b.orig), dtype=dt)
                for i, f in enumerate(key):
                    rec[f] = b.trace[:, i]
                rec["orig"] = b.orig
                seq.append(rec)
            walker.finish()
        except BaseException:
            seq.delete()
            raise
        finally:
            walker.close()
        srt = external_sort(seq.finish(), key, tag="traces-sorted", delete_input=True)
    laps.lap("phase1")
    with device.phase("phase2"):
        out = ExternalSequence.create(device, PARTITION_DTYPE, "ak-assign")
        next_id = 0
        prev = None
        for chunk in srt.chunks(CHUNK):
            start = changes(chunk, key)
            if prev is not None and chunk[list(key)][0].tolist() == prev:
                start[0] = False
            prev = chunk[list(key)][-1].tolist()
            ids = next_id + np.cumsum(start).astype(np.uint64)
            next_id = int(ids[-1])
            a = np.zeros(len(chunk), dtype=PARTITION_DTYPE)
            a["orig"] = chunk["orig"]
            a["bisim"] = ids
            out.append(a)
        srt.delete()
        part = external_sort(out.finish(), "orig", tag="ak-partition", path=out_path,
                             magic=PARTITION_MAGIC if out_path else None, delete_input=True)
    laps.lap("phase2")
    return XmlResult(part, next_id, walker.next_orig, laps.phases, laps.total(), "ak", k,
                     walker.max_depth)


# -- tree as a DAG -----------------------------------------------------------------

def _tree_files(device, tree: ExternalSequence, count: int, *, forward: bool):
    """Node and edge files of the tree for the general DAG partitioner.

    ``forward`` keeps parent-to-child edges and numbers nodes ``count-1-pre``;
    otherwise edges are reversed and the preorder ids are used as they are.
    Either way children get smaller ids than their parents.
    """
    nodes = ExternalSequence.create(device, NODE_REC, "tree-nodes")
    edges = ExternalSequence.create(device, EDGE_DTYPE, "tree-edges")
    top = np.uint64(count - 1)
    for chunk in tree.chunks(CHUNK):
        n = np.zeros(len(chunk), dtype=NODE_REC)
        n["id"] = top - chunk["orig"] if forward else chunk["orig"]
        n["label"] = chunk["label"]
        nodes.append(n)
        has = chunk["parent"] >= 0
        e = np.zeros(int(has.sum()), dtype=EDGE_DTYPE)
        par = chunk["parent"][has].astype(np.uint64)
        kid = chunk["orig"][has]
        if forward:
            e["parent"] = top - par
            e["child"] = top - kid
        else:
            e["parent"] = kid
            e["child"] = par
        edges.append(e)
    nodes.finish()
    edges.finish()
    if forward:
        nodes = external_sort(nodes, "id", tag="tree-nodes-sorted", delete_input=True)
    edges = external_sort(edges, ("child", "parent"), tag="tree-edges-sorted", delete_input=True)
    return nodes, edges


def tree_as_dag(device: BlockDevice, source, *, reverse: bool = True,
                labels: LabelTable | None = None):
    """Write a document as node/edge files. ``reverse`` points edges child to parent."""
    labels = labels if labels is not None else LabelTable()
    walker = TreeWalker(device, need_parent=True)
    tree = ExternalSequence.create(device, TREE_DTYPE, "x-tree")
    try:
        for chunk in event_chunks(source, labels):
            b = walker.feed(chunk)
            t = np.zeros(len(b.orig), dtype=TREE_DTYPE)
            t["orig"] = b.orig
            t["parent"] = b.parent_orig
            t["label"] = b.label
            tree.append(t)
        walker.finish()
    finally:
        walker.close()
    tree.finish()
    out = _tree_files(device, tree, walker.next_orig, forward=not reverse)
    tree.delete()
    return out


# -- F&B -------------------------------------------------------------------------

def fb_index(device: BlockDevice, source, *, labels: LabelTable | None = None,
             out_path: str | None = None) -> XmlResult:
    """Forward bisimulation of the tree, then the backward pass over its block ids."""
    laps = _Laps(device)
    with device.phase("phase1"):
        inp = oneindex_phase1(device, source, labels, keep_tree=True)
    laps.lap("phase1")
    with device.phase("forward"):
        nodes, edges = _tree_files(device, inp.tree, inp.count, forward=True)
        inp.tree.delete()
        inp.tree = None
        fwd = partition_dag(device, nodes, edges, RANK_LABEL)
        nodes.delete()
        edges.delete()
        # forward ids are count-1-pre; map back to preorder, ascending
        top = np.uint64(inp.count - 1)
        by_pre = ExternalSequence.create(device, PARTITION_DTYPE, "fb-fwd")
        for chunk in fwd.partition.chunks(CHUNK):
            c = np.zeros(len(chunk), dtype=PARTITION_DTYPE)
            c["orig"] = top - chunk["orig"]
            c["bisim"] = chunk["bisim"]
            by_pre.append(c)
        fwd.partition.delete()
        by_pre = external_sort(by_pre.finish(), "orig", tag="fb-fwd-sorted", delete_input=True)
        relabeled = _relabel_nodes(device, inp.nodes, by_pre)
        by_pre.delete()
        inp.nodes.delete()
        inp.nodes = relabeled
    laps.lap("forward")
    with device.phase("phase2"):
        res = oneindex_phase2(device, inp, out_path=out_path)
    inp.delete()
    laps.lap("phase2")
    return XmlResult(res.partition, res.blocks, inp.count, laps.phases, laps.total(), "fb",
                     max_depth=inp.max_depth)


def _relabel_nodes(device, nodes: ExternalSequence, labels_by_orig: ExternalSequence):
    by_orig = external_sort(nodes, "orig", tag="fb-nodes-orig")
    out = ExternalSequence.create(device, XNODE, "fb-nodes")
    with labels_by_orig.reader() as lr:
        look = SortedLookup(lr, "orig", "bisim")
        for chunk in by_orig.chunks(CHUNK):
            vals, found = look.lookup(chunk["orig"])
            if not found.all():
                raise InvariantError("forward partition does not cover every element")
            chunk = chunk.copy()
            chunk["label"] = vals
            out.append(chunk)
    by_orig.delete()
    return external_sort(out.finish(), ("rank", "idol"), tag="fb-nodes-sorted", delete_input=True)
