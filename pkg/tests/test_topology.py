import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eecfl.topology import (EQUIVALENCE, EmbeddingBlock, ProtocolKind, TopologyError, TreeTopology,
                            check_migration, migrate, parse_spec)
from tests.trees import random_tree_spec, structurally_valid

SPEC = "r(e1(d1,d2),e2(d3,d4))"
BY_LABEL = ProtocolKind("partial_order", descriptor=lambda node: int(node.id))


def test_build_example():
    topo = TreeTopology.build(SPEC)
    assert topo.depth == 3
    assert topo.tier(1) == ["r"] and topo.tier(2) == ["e1", "e2"]
    assert topo.tier(3) == ["d1", "d2", "d3", "d4"]
    assert topo.leaf_set("e1") == {"d1", "d2"}
    assert topo.leaf_set("r") == set(topo.leaves)
    assert topo.leaf_set("d3") == {"d3"}
    topo.check_invariants()


def test_single_node_tree():
    topo = TreeTopology.build("r")
    assert topo.leaves == ["r"] and topo.root == "r" and topo.depth == 1


def test_structured_form_matches_string():
    a = TreeTopology.build(SPEC)
    b = TreeTopology.build({"root": "r", "children": {"r": ["e1", "e2"], "e1": ["d1", "d2"],
                                                       "e2": ["d3", "d4"]}})
    assert a.to_spec() == b.to_spec()


@pytest.mark.parametrize("spec,fragment,position", [
    ("r(e1(d1,d2),e2(d3)", "expected ',' or ')'", 18),
    ("r(e1,)", "expected node id", 5),
    ("r(a)b(c)", "multiple roots", 4),
    ("(a,b)", "expected node id", 0),
])
def test_parse_errors_report_position(spec, fragment, position):
    with pytest.raises(TopologyError) as info:
        parse_spec(spec)
    assert fragment in str(info.value)
    assert info.value.position == position


def test_duplicate_and_uneven_trees_rejected():
    with pytest.raises(TopologyError, match="duplicate"):
        TreeTopology.build("r(a(x),b(x))")
    with pytest.raises(TopologyError, match="different tiers"):
        TreeTopology.build("r(a(x),b)")


def test_unknown_node():
    topo = TreeTopology.build(SPEC)
    with pytest.raises(KeyError):
        topo.leaf_set("zz")
    with pytest.raises(KeyError):
        check_migration(topo, EQUIVALENCE, "zz", "e1")


def test_edge_classes():
    topo = TreeTopology.build("r(m(e(d)))")
    assert [topo.edge_class(v) for v in ("d", "e", "m")] == ["end-edge", "edge-edge", "edge-cloud"]


def test_counterexample_tree():
    topo = TreeTopology.build("10(9(8,7),5(4,3))")
    verdict = check_migration(topo, BY_LABEL, "7", "5")
    assert not verdict and "7" in verdict.reason
    assert check_migration(topo, EQUIVALENCE, "7", "5")
    assert check_migration(topo, BY_LABEL, "4", "9")


def test_structural_rejections():
    topo = TreeTopology.build("r(a(b(x,y)),c(d(z)))")
    assert not check_migration(topo, EQUIVALENCE, "r", "a")
    assert not check_migration(topo, EQUIVALENCE, "a", "b")        # own descendant
    assert not check_migration(topo, EQUIVALENCE, "x", "z")        # leaf parent
    assert not check_migration(topo, EQUIVALENCE, "x", "c")        # tier change
    assert not check_migration(topo, EQUIVALENCE, "z", "b")        # d would become a leaf
    before = topo.to_spec()
    with pytest.raises(TopologyError):
        migrate(topo, "z", "b")
    assert topo.to_spec() == before


def _with_stores(spec):
    topo = TreeTopology.build(spec)
    rng = np.random.default_rng(0)
    for leaf in topo.leaves:
        n = int(rng.integers(1, 5))
        block = EmbeddingBlock(leaf, rng.normal(size=(n, 2)), rng.integers(0, 3, n))
        topo.node(leaf).store = {leaf: block}
        for a in topo.ancestors(leaf):
            topo.node(a).store[leaf] = block
    return topo


def test_migrate_reroutes_stores_and_is_involutive():
    topo = _with_stores(SPEC)
    root_store = set(topo.node("r").store)
    res = migrate(topo, "d2", "e2")
    assert topo.leaf_set("e1") == {"d1"} and topo.leaf_set("e2") == {"d2", "d3", "d4"}
    assert set(topo.node("e2").store) == topo.leaf_set("e2")
    assert set(topo.node("r").store) == root_store
    assert res.dropped_at == ["e1"] and res.gained_at == ["e2"]
    assert res.transfers == [("d2", "end-edge", len(topo.node("d2").store["d2"]))]
    assert topo.store_consistent()
    migrate(topo, "d2", "e1")
    assert topo.leaf_set("e1") == {"d1", "d2"} and topo.store_consistent()


def test_deep_migration_transfers():
    topo = _with_stores("r(a(b(x,y),c(z)),f(g(w)))")
    res = migrate(topo, "b", "f")
    assert res.dropped_at == ["a"] and res.gained_at == ["f"]
    assert [t[1] for t in res.transfers] == ["edge-edge"]
    assert topo.store_consistent()


def test_equivalence_universality_on_random_trees():
    rng = np.random.default_rng(2024)
    checked = 0
    for _ in range(1000):
        topo = TreeTopology.build(random_tree_spec(rng))
        non_root = [v for v in topo.nodes if v != topo.root]
        v1 = non_root[rng.integers(len(non_root))]
        same_tier = [v for v in non_root if topo.node(v).tier == topo.node(v1).tier]
        pool = same_tier if rng.random() < 0.7 else non_root
        v2 = pool[rng.integers(len(pool))]
        target = topo.parent(v2)
        expected = structurally_valid(topo, v1, target)
        assert bool(check_migration(topo, EQUIVALENCE, v1, target)) == expected
        if expected:
            checked += 1
            migrate(topo, v1, target)
            topo.check_invariants()
            assert topo.leaf_set(topo.root) == set(topo.leaves)
    assert checked > 300


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_invariants_survive_migration_sequences(seed):
    rng = np.random.default_rng(seed)
    topo = _with_stores(random_tree_spec(rng, max_depth=4, max_fanout=3))
    for _ in range(10):
        non_root = sorted(v for v in topo.nodes if v != topo.root)
        v1 = non_root[rng.integers(len(non_root))]
        targets = sorted(v for v in topo.nodes if structurally_valid(topo, v1, v))
        if not targets:
            continue
        migrate(topo, v1, targets[rng.integers(len(targets))])
        topo.check_invariants()
        assert topo.store_consistent()


def test_describe_lists_every_node():
    topo = TreeTopology.build(SPEC)
    text = topo.describe()
    assert len(text.splitlines()) == 7
    assert "e1\ttier=2\tparent=r\tleaves=d1,d2" in text
