"""Fixtures and small utilities shared by the test modules."""

from __future__ import annotations

import itertools

import numpy as np

from extbisim.bisim import partition_dag
from extbisim.generator import random_tree_parents, xml_from_parents
from extbisim.graphio import canonical_array, write_edges, write_nodes
from extbisim.oracle import SmallGraph

A, B, C, D = 1, 2, 3, 4

# Seven-node DAG, ids children first:
#   0:c 1:c 2:b 3:b 4:d 5:a 6:d ; a->{b2,b3}, b2->{c0,c1}, b3->c0, d6->b3, d4->c0
REF_DAG_LABELS = [C, C, B, B, D, A, D]
REF_DAG_EDGES = [(5, 2), (5, 3), (2, 0), (2, 1), (3, 0), (6, 3), (4, 0)]
# its maximum bisimulation graph: a->b, b->c, d->b, d->c (one d each)
REF_QUOTIENT_LABELS = [A, B, C, D, D]
REF_QUOTIENT_EDGES = [(0, 1), (1, 2), (3, 1), (4, 2)]

# Ten-element document; preorder ids
#   0:a -> {1:a, 4:a}; 1 -> {2:b, 3:c}; 4 -> {5:b, 6:c, 7:a}; 7 -> {8:b, 9:c}
REF_DOC = b"<a><a><b/><c/></a><a><b/><c/><a><b/><c/></a></a></a>"
REF_DOC_PARENT = [-1, 0, 1, 1, 0, 4, 4, 4, 7, 7]
REF_DOC_LABELS = [A, A, B, C, A, B, C, A, B, C]
# the same elements under the level-order numbering used in the expected blocks
LEVEL_ID = [0, 1, 3, 4, 2, 5, 6, 7, 8, 9]


def level_blocks(partition: dict[int, int]) -> list[list[int]]:
    """Blocks of a preorder-keyed partition, in level-order ids, sorted."""
    groups: dict[int, list[int]] = {}
    for pre, b in partition.items():
        groups.setdefault(b, []).append(LEVEL_ID[pre])
    return sorted(sorted(g) for g in groups.values())


def ref_dag_graph() -> SmallGraph:
    return SmallGraph(range(7), REF_DAG_LABELS, REF_DAG_EDGES)


def ref_doc_graph() -> SmallGraph:
    return tree_graph(REF_DOC_PARENT, REF_DOC_LABELS)


def tree_graph(parent, labels) -> SmallGraph:
    n = len(parent)
    return SmallGraph(range(n), labels, [(int(parent[i]), i) for i in range(1, n)])


def partition_dict(seq) -> dict[int, int]:
    p = seq.read_all()
    return dict(zip(p["orig"].tolist(), p["bisim"].tolist()))


def canonical(seq) -> list[int]:
    p = seq.read_all()
    return canonical_array(p["orig"], p["bisim"])[1].tolist()


def canonical_dict(part: dict[int, int]) -> list[int]:
    keys = sorted(part)
    return canonical_array(np.array(keys, dtype=np.uint64),
                           np.array([part[k] for k in keys], dtype=np.uint64))[1].tolist()


def run_dag(device, ids, labels, edges, variant="rank_label", **kw):
    edges = sorted(edges, key=lambda e: (e[1], e[0]))
    nodes = write_nodes(device, None, ids, labels)
    es = write_edges(device, None, [p for p, _ in edges], [c for _, c in edges])
    return partition_dag(device, nodes, es, variant, **kw)


def random_dag(seed: int, n: int, alphabet: int, density: float):
    """Small DAG with children-first ids and labels in 1..alphabet."""
    rng = np.random.default_rng(seed)
    labels = rng.integers(1, alphabet + 1, n).tolist()
    edges = set()
    for v in range(1, n):
        k = int(rng.poisson(density))
        for c in rng.integers(0, v, k).tolist():
            edges.add((v, int(c)))
    return list(range(n)), labels, sorted(edges)


def random_doc(seed: int, n: int, alphabet: int, shape: str = "recursive"):
    parent = random_tree_parents(n, seed, shape=shape)
    labels = np.random.default_rng(seed).integers(1, alphabet + 1, n)
    return xml_from_parents(parent, labels), parent, labels


def isomorphic(labels1, edges1, labels2, edges2) -> bool:
    """Brute-force labelled digraph isomorphism for graphs of a handful of nodes."""
    n = len(labels1)
    if n != len(labels2) or len(set(edges1)) != len(set(edges2)):
        return False
    e2 = set(edges2)
    for perm in itertools.permutations(range(n)):
        if all(labels1[i] == labels2[perm[i]] for i in range(n)) and \
                {(perm[a], perm[b]) for a, b in edges1} == e2:
            return True
    return False


def signature_partition(n: int, labels, parents, children) -> list[int]:
    """Bisimulation blocks of a DAG with ids 0..n-1 numbered children first.

    On an acyclic graph a node's block is determined by its label and the set
    of its children's blocks, so one pass in id order suffices.
    """
    order = np.argsort(np.asarray(parents), kind="stable")
    kids = np.asarray(children)[order].tolist()
    ptr = np.searchsorted(np.asarray(parents)[order], np.arange(n + 1)).tolist()
    labels = np.asarray(labels).tolist()
    block = [0] * n
    names: dict = {}
    for v in range(n):
        sig = (labels[v], frozenset(block[c] for c in kids[ptr[v]:ptr[v + 1]]))
        block[v] = names.setdefault(sig, len(names) + 1)
    return block


# acceptance results: criterion -> list of (check, passed, detail)
RESULTS: dict[int, list[tuple[str, bool, str]]] = {}


class criterion:
    """Context manager recording the outcome of one acceptance check."""

    def __init__(self, number: int, check: str):
        self.number = number
        self.check = check
        self.detail = ""

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        detail = self.detail if exc is None else f"{self.detail} {type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}".strip()
        RESULTS.setdefault(self.number, []).append((self.check, exc is None, detail))
        print(f"criterion {self.number} [{self.check}]: {'PASS' if exc is None else 'FAIL'} {detail}")
        return False
