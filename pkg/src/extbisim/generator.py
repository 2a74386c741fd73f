"""Seeded benchmark inputs: random DAGs, trees, chains and XML documents.

Randomness comes from numpy's PCG64 seeded through ``SeedSequence(seed)``.
Each block of 2^16 nodes draws from its own spawned child stream, and labels
from a separate one, so the output depends only on the GenSpec.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .graphio import EDGE_DTYPE, EDGE_MAGIC, NODE_DTYPE, NODE_MAGIC, NODE_REC
from .iomodel import BlockDevice, ExternalSequence, external_sort

SHAPES = ("dag_geometric", "dag_pairwise", "tree", "chain", "tc_chain")
BLOCK = 1 << 16
# P(heads) giving about 3.5 children per node before duplicates are dropped
DEFAULT_P = {"dag_geometric": 0.78, "dag_pairwise": 0.001}
PAIRWISE_MAX = 100_000
TC_CHAIN_MAX = 20_000


def default_alphabet(n: int) -> int:
    return max(2, math.ceil(math.log2(max(n, 1))))


@dataclass
class GenSpec:
    shape: str
    n: int
    p: float | None = None
    label_alphabet: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"shape must be one of {SHAPES}")
        if self.n < 1:
            raise ValueError("n must be at least 1")
        if self.p is None:
            self.p = DEFAULT_P.get(self.shape, 0.0)
        if self.shape in DEFAULT_P and not 0 < self.p < 1:
            raise ValueError("p must lie in (0, 1)")
        if self.label_alphabet is None:
            self.label_alphabet = default_alphabet(self.n)
        if self.label_alphabet < 1 or self.label_alphabet >= 1 << 32:
            raise ValueError("label_alphabet must be a positive 32-bit count")
        if self.shape == "dag_pairwise" and self.n > PAIRWISE_MAX:
            raise ValueError(f"dag_pairwise is limited to n <= {PAIRWISE_MAX}")
        if self.shape == "tc_chain" and self.n > TC_CHAIN_MAX:
            raise ValueError(f"tc_chain is limited to n <= {TC_CHAIN_MAX}")
        if not 0 <= self.seed < 1 << 64:
            raise ValueError("seed must be a 64-bit unsigned integer")


@dataclass
class GenResult:
    nodes: ExternalSequence
    edges: ExternalSequence
    meta: dict = field(default_factory=dict)


def _streams(seed: int, n: int):
    ss = np.random.SeedSequence(seed)
    label_ss, struct_ss = ss.spawn(2)
    blocks = struct_ss.spawn(-(-n // BLOCK))
    return np.random.Generator(np.random.PCG64(label_ss)), [
        np.random.Generator(np.random.PCG64(s)) for s in blocks
    ]


def _write_nodes(device, n, alphabet, rng, path):
    if path is None:
        out = ExternalSequence.create(device, NODE_REC, "gen-nodes")
    else:
        out = ExternalSequence.create(device, NODE_DTYPE, path=path, magic=NODE_MAGIC)
    for lo in range(0, n, BLOCK):
        hi = min(n, lo + BLOCK)
        rec = np.zeros(hi - lo, dtype=out.dtype)
        rec["id"] = np.arange(lo, hi, dtype=np.uint64)
        rec["label"] = rng.integers(1, alphabet + 1, hi - lo, dtype=np.uint32)
        out.append(rec)
    return out.finish()


def _edge_sink(device, path, presorted: bool):
    if presorted and path is not None:
        return ExternalSequence.create(device, EDGE_DTYPE, path=path, magic=EDGE_MAGIC)
    return ExternalSequence.create(device, EDGE_DTYPE, "gen-edges")


def _finish_edges(seq, path, presorted):
    seq.finish()
    if presorted:
        return seq
    return external_sort(seq, ("child", "parent"), tag="gen-edges-sorted", path=path,
                         magic=EDGE_MAGIC if path else None, delete_input=True)


def _edges(parents, children):
    e = np.zeros(len(parents), dtype=EDGE_DTYPE)
    e["parent"] = parents
    e["child"] = children
    return e


def _geometric(spec, rngs, sink):
    n, p = spec.n, spec.p
    for b, rng in enumerate(rngs):
        lo = b * BLOCK
        hi = min(n, lo + BLOCK)
        v = np.arange(lo, hi, dtype=np.int64)
        heads = rng.geometric(1.0 - p, hi - lo) - 1
        heads[v == 0] = 0
        par = np.repeat(v, heads)
        child = (rng.random(len(par)) * par).astype(np.int64)
        child = np.minimum(child, par - 1)
        pairs = np.unique(par * n + child)
        sink.append(_edges(pairs // n, pairs % n))


def _pairwise(spec, rngs, sink):
    # edge (v -> u) for u < v, enumerated child-major: index = off[u] + (v - u - 1)
    n, p = spec.n, spec.p
    total = n * (n - 1) // 2
    counts = np.arange(n - 1, -1, -1, dtype=np.int64)
    off = np.concatenate([[0], np.cumsum(counts)])
    rng = rngs[0]
    pos = -1
    step = 1 << 20
    while True:
        gaps = rng.geometric(p, step).astype(np.int64)
        idx = pos + np.cumsum(gaps)
        idx = idx[idx < total]
        if len(idx):
            u = np.searchsorted(off, idx, side="right") - 1
            v = idx - off[u] + u + 1
            sink.append(_edges(v, u))
            pos = int(idx[-1])
        if len(idx) < step:
            break


def _tree(spec, rngs, sink):
    # random recursive tree in generation order g, then id = n-1-g so children come first
    n = spec.n
    gen_parent = np.zeros(n, dtype=np.int64)
    for b, rng in enumerate(rngs):
        lo = b * BLOCK
        hi = min(n, lo + BLOCK)
        g = np.arange(lo, hi, dtype=np.int64)
        gen_parent[lo:hi] = np.minimum((rng.random(hi - lo) * g).astype(np.int64), g - 1)
    g = np.arange(n - 1, 0, -1, dtype=np.int64)
    for lo in range(0, len(g), BLOCK):
        gg = g[lo:lo + BLOCK]
        sink.append(_edges(n - 1 - gen_parent[gg], n - 1 - gg))


def _chain(spec, rngs, sink):
    for lo in range(0, spec.n - 1, BLOCK):
        c = np.arange(lo, min(spec.n - 1, lo + BLOCK), dtype=np.int64)
        sink.append(_edges(c + 1, c))


def _tc_chain(spec, rngs, sink):
    n = spec.n
    for u in range(n - 1):
        v = np.arange(u + 1, n, dtype=np.int64)
        sink.append(_edges(v, np.full(len(v), u)))


_SHAPE_FN = {
    "dag_geometric": (_geometric, False),
    "dag_pairwise": (_pairwise, True),
    "tree": (_tree, True),
    "chain": (_chain, True),
    "tc_chain": (_tc_chain, True),
}


def generate(spec: GenSpec, device: BlockDevice, nodes_path: str | None = None,
             edges_path: str | None = None) -> GenResult:
    """Write the node and edge files for ``spec`` (temp sequences when no path)."""
    label_rng, rngs = _streams(spec.seed, spec.n)
    nodes = _write_nodes(device, spec.n, spec.label_alphabet, label_rng, nodes_path)
    fn, presorted = _SHAPE_FN[spec.shape]
    sink = _edge_sink(device, edges_path, presorted)
    fn(spec, rngs, sink)
    edges = _finish_edges(sink, edges_path, presorted)
    meta = {
        "shape": spec.shape, "n": spec.n, "p": spec.p, "label_alphabet": spec.label_alphabet,
        "seed": spec.seed, "edges": len(edges), "mean_out_degree": len(edges) / spec.n,
    }
    return GenResult(nodes, edges, meta)


def random_tree_parents(n: int, seed: int, *, shape: str = "recursive", fanout: int = 4):
    """Parent array of a random tree in preorder numbering (parent[0] = -1).

    ``recursive`` attaches each node to a uniform earlier node; ``deep``
    attaches to one of the last ``fanout`` nodes, giving long root paths.
    Preorder numbering is obtained by a depth-first relabelling.
    """
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    gen = np.full(n, -1, dtype=np.int64)
    if n > 1:
        g = np.arange(1, n, dtype=np.int64)
        if shape == "recursive":
            gen[1:] = np.minimum((rng.random(n - 1) * g).astype(np.int64), g - 1)
        elif shape == "deep":
            back = rng.integers(1, fanout + 1, n - 1)
            gen[1:] = np.maximum(g - back, 0)
        else:
            raise ValueError(f"unknown tree shape {shape!r}")
    # children lists in generation order, then iterative preorder walk
    order = np.argsort(gen[1:], kind="stable") + 1
    starts = np.searchsorted(gen[order], np.arange(n))
    ends = np.searchsorted(gen[order], np.arange(n), side="right")
    pre = np.empty(n, dtype=np.int64)
    stack = [0]
    k = 0
    while stack:
        v = stack.pop()
        pre[v] = k
        k += 1
        stack.extend(order[starts[v]:ends[v]][::-1].tolist())
    parent = np.full(n, -1, dtype=np.int64)
    parent[pre[1:]] = pre[gen[1:]]
    return parent


def xml_from_parents(parent: np.ndarray, labels: np.ndarray, names=None) -> bytes:
    """Serialise a preorder tree as an XML document (small inputs)."""
    return b"".join(iter_xml(parent, labels, names))


def iter_xml(parent: np.ndarray, labels: np.ndarray, names=None, chunk: int = 1 << 14):
    """Yield the document for a preorder parent array in pieces."""
    n = len(parent)
    if names is None:
        names = {}
    depth = [0] * n
    par = parent.tolist()
    for i in range(1, n):
        depth[i] = depth[par[i]] + 1
    out = []
    stack: list[int] = []
    for i in range(n):
        while stack and len(stack) > depth[i]:
            out.append(b"</" + _tag(labels[stack.pop()], names) + b">")
        out.append(b"<" + _tag(labels[i], names) + b">")
        stack.append(i)
        if len(out) >= chunk:
            yield b"".join(out)
            out = []
    while stack:
        out.append(b"</" + _tag(labels[stack.pop()], names) + b">")
    out.append(b"\n")
    yield b"".join(out)


def _tag(code, names) -> bytes:
    code = int(code)
    name = names.get(code)
    if name is None:
        name = f"t{code}"
    return name.encode("utf-8")


def generate_xml(path: str, n: int, seed: int = 0, *, alphabet: int | None = None,
                 shape: str = "recursive") -> dict:
    """Write a random ``n``-element document whose tags are ``t1..tA``."""
    parent = random_tree_parents(n, seed, shape=shape)
    alphabet = alphabet or default_alphabet(n)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 1])))
    labels = rng.integers(1, alphabet + 1, n).tolist()
    with open(path, "wb") as fh:
        for piece in iter_xml(parent, labels):
            fh.write(piece)
    return {"n": n, "seed": seed, "alphabet": alphabet, "shape": shape}
