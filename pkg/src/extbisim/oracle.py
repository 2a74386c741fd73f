"""Brute-force in-memory references used to check the external algorithms."""

from __future__ import annotations

from collections import deque

import numpy as np

MAX_NODES = 100_000


class CycleError(ValueError):
    pass


class SmallGraph:
    """Labelled directed graph held in memory; edges point from parent to child."""

    def __init__(self, ids, labels, edges):
        ids = [int(i) for i in ids]
        if len(ids) > MAX_NODES:
            raise ValueError(f"oracle graphs are capped at {MAX_NODES} nodes")
        self.ids = ids
        self.index = {v: i for i, v in enumerate(ids)}
        if len(self.index) != len(ids):
            raise ValueError("duplicate node id")
        self.labels = [int(x) for x in labels]
        n = len(ids)
        self.children: list[list[int]] = [[] for _ in range(n)]
        self.parents: list[list[int]] = [[] for _ in range(n)]
        for p, c in edges:
            pi, ci = self.index[int(p)], self.index[int(c)]
            self.children[pi].append(ci)
            self.parents[ci].append(pi)
        self._check_acyclic()

    @classmethod
    def from_arrays(cls, ids, labels, parents, children) -> "SmallGraph":
        return cls(ids, labels, zip(np.asarray(parents).tolist(), np.asarray(children).tolist()))

    @classmethod
    def from_sequences(cls, nodes, edges) -> "SmallGraph":
        n = nodes.read_all()
        e = edges.read_all()
        return cls.from_arrays(n["id"], n["label"], e["parent"], e["child"])

    def __len__(self) -> int:
        return len(self.ids)

    def edges(self):
        for p, kids in enumerate(self.children):
            for c in kids:
                yield self.ids[p], self.ids[c]

    def reversed(self) -> "SmallGraph":
        return SmallGraph(self.ids, self.labels, ((c, p) for p, c in self.edges()))

    def is_tree(self) -> bool:
        roots = [i for i, ps in enumerate(self.parents) if not ps]
        return len(roots) == 1 and all(len(ps) <= 1 for ps in self.parents)

    def _check_acyclic(self) -> None:
        indeg = [len(set(ps)) for ps in self.parents]
        queue = deque(i for i, d in enumerate(indeg) if d == 0)
        seen = 0
        while queue:
            v = queue.popleft()
            seen += 1
            for c in set(self.children[v]):
                indeg[c] -= 1
                if indeg[c] == 0:
                    queue.append(c)
        if seen != len(self.ids):
            raise CycleError("graph has a cycle")

    def partition(self, classes) -> dict[int, int]:
        """Canonical {id: block} with blocks numbered by first appearance in id order."""
        order = sorted(range(len(self.ids)), key=lambda i: self.ids[i])
        names: dict = {}
        out = {}
        for i in order:
            out[self.ids[i]] = names.setdefault(classes[i], len(names) + 1)
        return out


def _relabel(keys) -> tuple[list[int], int]:
    names: dict = {}
    return [names.setdefault(k, len(names)) for k in keys], len(names)


def refine_classes(g: SmallGraph, use_children=True, use_parents=False, initial=None):
    """Fixpoint of class(n) <- (class(n), child classes, parent classes).

    Returns the classes and the number of refinement rounds performed.
    """
    classes, count = _relabel(g.labels if initial is None else initial)
    rounds = 0
    while True:
        rounds += 1
        keys = []
        for v in range(len(g)):
            kids = frozenset(classes[c] for c in g.children[v]) if use_children else None
            pars = frozenset(classes[p] for p in g.parents[v]) if use_parents else None
            keys.append((classes[v], kids, pars))
        new, new_count = _relabel(keys)
        if new_count == count:
            return classes, rounds
        classes, count = new, new_count


def oracle_bisim(g: SmallGraph) -> dict[int, int]:
    """Coarsest (forward) bisimulation partition."""
    classes, _ = refine_classes(g)
    return g.partition(classes)


def oracle_bisim_rounds(g: SmallGraph) -> int:
    return refine_classes(g)[1]


def oracle_backward(g: SmallGraph) -> dict[int, int]:
    """Backward bisimulation: forward bisimulation of the edge-reversed graph."""
    return oracle_bisim(g.reversed())


def oracle_rank(g: SmallGraph) -> dict[int, int]:
    """Longest path (in edges) from each node, by depth-first search."""
    rank = [-1] * len(g)
    for s in range(len(g)):
        if rank[s] >= 0:
            continue
        stack = [(s, 0)]
        while stack:
            v, i = stack.pop()
            kids = g.children[v]
            if i < len(kids):
                stack.append((v, i + 1))
                if rank[kids[i]] < 0:
                    stack.append((kids[i], 0))
            else:
                rank[v] = max((rank[c] + 1 for c in kids), default=0)
    return {g.ids[i]: rank[i] for i in range(len(g))}


def _require_tree(g: SmallGraph) -> None:
    if not g.is_tree():
        raise ValueError("input must be a rooted tree")


def traces(g: SmallGraph, k: int, pad: int = 0) -> list[tuple[int, ...]]:
    """The last k+1 labels of each root path, padded in front with ``pad``."""
    _require_tree(g)
    out: list[tuple[int, ...] | None] = [None] * len(g)
    root = next(i for i, ps in enumerate(g.parents) if not ps)
    out[root] = (pad,) * k + (g.labels[root],)
    stack = [root]
    while stack:
        v = stack.pop()
        for c in g.children[v]:
            out[c] = (out[v] + (g.labels[c],))[-(k + 1):]
            stack.append(c)
    return out


def oracle_backward_k(g: SmallGraph, k: int) -> dict[int, int]:
    """Backward k-bisimulation on a tree, by the pairwise recursive definition.

    Cross-checked against grouping by (k+1)-traces; a disagreement raises.
    """
    if k < 0:
        raise ValueError("k must be non-negative")
    _require_tree(g)
    memo: dict[tuple[int, int, int], bool] = {}

    def similar(a: int, b: int, j: int) -> bool:
        if a == b:
            return True
        if a > b:
            a, b = b, a
        key = (a, b, j)
        hit = memo.get(key)
        if hit is not None:
            return hit
        if g.labels[a] != g.labels[b]:
            res = False
        elif j == 0:
            res = True
        else:
            pa, pb = g.parents[a], g.parents[b]
            res = all(any(similar(x, y, j - 1) for y in pb) for x in pa) and \
                all(any(similar(x, y, j - 1) for x in pa) for y in pb)
        memo[key] = res
        return res

    reps: list[int] = []
    classes = [0] * len(g)
    for v in range(len(g)):
        for ci, r in enumerate(reps):
            if similar(r, v, k):
                classes[v] = ci
                break
        else:
            classes[v] = len(reps)
            reps.append(v)
    by_def = g.partition(classes)
    by_trace = g.partition(traces(g, k))
    if by_def != by_trace:
        raise AssertionError(f"k={k}: recursive definition and trace grouping disagree")
    return by_def


def oracle_fb(g: SmallGraph) -> dict[int, int]:
    """Coarsest partition stable under both child and parent classes."""
    classes, _ = refine_classes(g, use_children=True, use_parents=True)
    return g.partition(classes)


def block_count(partition: dict[int, int]) -> int:
    return len(set(partition.values()))


def blocks_of(partition: dict[int, int]) -> list[list[int]]:
    groups: dict[int, list[int]] = {}
    for v, b in sorted(partition.items()):
        groups.setdefault(b, []).append(v)
    return sorted(groups.values())
