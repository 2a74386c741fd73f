import hashlib

import numpy as np
import pytest

from extbisim.bisim import compute_ranks
from extbisim.generator import (
    SHAPES,
    GenSpec,
    default_alphabet,
    generate,
    generate_xml,
    random_tree_parents,
    xml_from_parents,
)
from extbisim.graphio import validate_input
from extbisim.xmlindex import scan_xml


def _digest(path):
    return hashlib.sha256(open(path, "rb").read()).hexdigest()


def test_chain(device):
    g = generate(GenSpec("chain", 5), device)
    assert len(g.edges) == 4
    r = compute_ranks(device, g.nodes, g.edges).read_all()
    assert sorted(r["rank"].tolist()) == [0, 1, 2, 3, 4]


def test_tc_chain(device):
    g = generate(GenSpec("tc_chain", 5), device)
    assert len(g.edges) == 10


def test_tree(device):
    g = generate(GenSpec("tree", 2000, seed=4), device)
    e = g.edges.read_all()
    assert len(e) == 1999
    assert len(np.unique(e["child"])) == 1999       # one parent each
    assert 1999 not in e["child"].tolist()          # the root has the largest id


@pytest.mark.parametrize("shape", SHAPES)
def test_outputs_validate(device, shape):
    g = generate(GenSpec(shape, 3000 if shape != "tc_chain" else 60, seed=1), device)
    rep = validate_input(g.nodes, g.edges)
    assert rep.ok and rep.duplicate_edges == 0


def test_labels_in_alphabet(device):
    g = generate(GenSpec("dag_geometric", 5000, label_alphabet=3), device)
    assert set(g.nodes.read_all()["label"].tolist()) == {1, 2, 3}
    assert default_alphabet(10**6) == 20 and default_alphabet(1) == 2


def test_pairwise_edge_count(device):
    n, p = 10_000, 0.01
    g = generate(GenSpec("dag_pairwise", n, p=p, seed=2), device)
    expected = p * n * (n - 1) / 2
    assert abs(len(g.edges) - expected) <= 0.05 * expected


def test_geometric_mean_degree(device):
    g = generate(GenSpec("dag_geometric", 10**6, seed=5), device)
    assert 3.0 <= g.meta["mean_out_degree"] <= 4.0


@pytest.mark.parametrize("shape", ["dag_geometric", "dag_pairwise", "tree"])
def test_deterministic_files(device, tmp_path, shape):
    digests = []
    for i in range(2):
        generate(GenSpec(shape, 70_000 if shape != "dag_pairwise" else 3000, seed=9), device,
                 str(tmp_path / f"n{i}"), str(tmp_path / f"e{i}"))
        digests.append((_digest(tmp_path / f"n{i}"), _digest(tmp_path / f"e{i}")))
    assert digests[0] == digests[1]
    generate(GenSpec(shape, 3000, seed=10), device, str(tmp_path / "n2"), str(tmp_path / "e2"))
    assert _digest(tmp_path / "e2") != digests[0][1]


@pytest.mark.parametrize("kw", [
    dict(shape="grid", n=5), dict(shape="chain", n=0), dict(shape="dag_geometric", n=5, p=1.5),
    dict(shape="dag_pairwise", n=200_000), dict(shape="tc_chain", n=30_000),
    dict(shape="chain", n=5, seed=-1), dict(shape="chain", n=5, label_alphabet=0),
])
def test_bad_specs(kw):
    with pytest.raises(ValueError):
        GenSpec(**kw)


@pytest.mark.parametrize("shape", ["recursive", "deep"])
def test_tree_parents_are_preorder(shape):
    parent = random_tree_parents(3000, 1, shape=shape)
    assert parent[0] == -1 and np.all(parent[1:] < np.arange(1, 3000))
    # preorder: every subtree occupies a contiguous id range
    size = np.ones(3000, dtype=np.int64)
    for v in range(2999, 0, -1):
        size[parent[v]] += size[v]
    for v in range(1, 3000):
        p = parent[v]
        assert p < v < p + size[p]


def test_xml_document(tmp_path):
    meta = generate_xml(str(tmp_path / "d.xml"), 500, seed=3, alphabet=4)
    events = list(scan_xml(str(tmp_path / "d.xml")))
    starts = [e for e in events if e.kind == "start"]
    assert len(starts) == 500 and len(events) == 1000 and meta["alphabet"] == 4
    assert xml_from_parents(np.array([-1, 0, 0]), [1, 2, 2]) == b"<t1><t2></t2><t2></t2></t1>\n"
