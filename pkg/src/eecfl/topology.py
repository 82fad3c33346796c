"""End-edge-cloud tree: construction, relational queries and node migration.

Trees are written as nested parentheses, e.g. ``r(e1(d1,d2),e2(d3,d4))``.
The root is tier 1 and every leaf must sit on the same (deepest) tier.
"""

from __future__ import annotations

import operator
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterable, List, Optional, Set

import numpy as np


class TopologyError(ValueError):
    """Malformed tree description or structural violation."""

    def __init__(self, message: str, position: Optional[int] = None):
        if position is not None:
            message = f"{message} (at position {position})"
        super().__init__(message)
        self.position = position


@dataclass
class EmbeddingBlock:
    """Embeddings and labels originating from one leaf."""

    origin: str
    embeddings: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)


@dataclass
class Node:
    id: str
    tier: int = 0
    parent: Optional[str] = None
    children: List[str] = field(default_factory=list)
    model: Any = None
    store: Dict[str, EmbeddingBlock] = field(default_factory=dict)
    queues: Any = None
    data: Any = None

    @property
    def is_leaf(self) -> bool:
        return not self.children


# -- parsing ------------------------------------------------------------------

def parse_spec(text: str):
    """Parse a nested-parentheses tree into ``(id, [children...])`` tuples."""
    pos = 0
    n = len(text)

    def skip_ws():
        nonlocal pos
        while pos < n and text[pos].isspace():
            pos += 1

    def ident():
        nonlocal pos
        skip_ws()
        start = pos
        while pos < n and (text[pos].isalnum() or text[pos] in "_-.:"):
            pos += 1
        if start == pos:
            found = repr(text[pos]) if pos < n else "end of input"
            raise TopologyError(f"expected node id, found {found}", pos)
        return text[start:pos]

    def subtree():
        nonlocal pos
        name = ident()
        skip_ws()
        kids = []
        if pos < n and text[pos] == "(":
            pos += 1
            while True:
                kids.append(subtree())
                skip_ws()
                if pos < n and text[pos] == ",":
                    pos += 1
                    continue
                if pos < n and text[pos] == ")":
                    pos += 1
                    break
                found = repr(text[pos]) if pos < n else "end of input"
                raise TopologyError(f"expected ',' or ')', found {found}", pos)
        return name, kids

    tree = subtree()
    skip_ws()
    if pos != n:
        raise TopologyError(f"unexpected trailing input {text[pos]!r}; multiple roots?", pos)
    return tree


def _from_mapping(spec: dict):
    """Structured form: ``{"root": "r", "children": {"r": ["e1", ...], ...}}``."""
    children = {k: list(v) for k, v in spec.get("children", {}).items()}
    root = spec.get("root")
    if root is None:
        raise TopologyError("structured topology needs a 'root' key")
    seen = set()

    def walk(v):
        if v in seen:
            raise TopologyError(f"node {v!r} appears more than once")
        seen.add(v)
        return v, [walk(c) for c in children.get(v, [])]

    tree = walk(root)
    orphans = set(children) - seen
    if orphans:
        raise TopologyError(f"nodes unreachable from root: {sorted(orphans)}")
    return tree


# -- tree ---------------------------------------------------------------------

class TreeTopology:
    def __init__(self, nodes: Dict[str, Node], root: str):
        self.nodes = nodes
        self.root = root
        self._refresh()

    @classmethod
    def build(cls, spec) -> "TreeTopology":
        tree = parse_spec(spec) if isinstance(spec, str) else _from_mapping(spec)
        nodes: Dict[str, Node] = {}

        def add(entry, parent, tier):
            name, kids = entry
            if name in nodes:
                raise TopologyError(f"duplicate node id {name!r}")
            nodes[name] = Node(name, tier, parent, [k[0] for k in kids])
            for k in kids:
                add(k, name, tier + 1)

        add(tree, None, 1)
        topo = cls(nodes, tree[0])
        depths = {topo.nodes[v].tier for v in topo.leaves}
        if len(depths) != 1:
            raise TopologyError(f"leaves sit on different tiers {sorted(depths)}; all leaves must share one tier")
        return topo

    def _refresh(self) -> None:
        self._leaf_sets: Dict[str, Set[str]] = {}

        def collect(v):
            node = self.nodes[v]
            if node.is_leaf:
                out = {v}
            else:
                out = set()
                for c in node.children:
                    out |= collect(c)
            self._leaf_sets[v] = out
            return out

        collect(self.root)

    def __contains__(self, v: str) -> bool:
        return v in self.nodes

    def __getitem__(self, v: str) -> Node:
        return self.node(v)

    def node(self, v: str) -> Node:
        try:
            return self.nodes[v]
        except KeyError:
            raise KeyError(f"unknown node {v!r}") from None

    @property
    def depth(self) -> int:
        return max(n.tier for n in self.nodes.values())

    @property
    def leaves(self) -> List[str]:
        return sorted(v for v, n in self.nodes.items() if n.is_leaf)

    def tier(self, t: int) -> List[str]:
        return sorted(v for v, n in self.nodes.items() if n.tier == t)

    def parent(self, v: str) -> Optional[str]:
        return self.node(v).parent

    def children(self, v: str) -> List[str]:
        return list(self.node(v).children)

    def leaf_set(self, v: str) -> Set[str]:
        self.node(v)
        return set(self._leaf_sets[v])

    def ancestors(self, v: str) -> List[str]:
        out = []
        p = self.node(v).parent
        while p is not None:
            out.append(p)
            p = self.nodes[p].parent
        return out

    def subtree(self, v: str) -> Set[str]:
        out = {v}
        for c in self.node(v).children:
            out |= self.subtree(c)
        return out

    def edge_class(self, child: str) -> str:
        """Traffic class of the link between ``child`` and its parent."""
        if self.node(child).is_leaf:
            return "end-edge"
        if self.node(child).parent == self.root:
            return "edge-cloud"
        return "edge-edge"

    def check_invariants(self) -> None:
        roots = [v for v, n in self.nodes.items() if n.parent is None]
        if roots != [self.root]:
            raise TopologyError(f"expected single root {self.root!r}, found {roots}")
        if self.nodes[self.root].tier != 1:
            raise TopologyError("root must be tier 1")
        reached = self.subtree(self.root)
        if reached != set(self.nodes):
            raise TopologyError("tree is not connected")
        for v, n in self.nodes.items():
            for c in n.children:
                if self.nodes[c].parent != v:
                    raise TopologyError(f"parent/children maps disagree on edge {v}-{c}")
                if self.nodes[c].tier != n.tier + 1:
                    raise TopologyError(f"tier jump on edge {v}-{c}")
        if {self.nodes[v].tier for v in self.leaves} != {self.depth}:
            raise TopologyError("leaves are not all on the last tier")

    def store_consistent(self) -> bool:
        """Each node stores exactly the blocks originating in its leaf set."""
        return all(set(n.store) == self._leaf_sets[v] for v, n in self.nodes.items())

    def leaf_set_map(self) -> Dict[str, List[str]]:
        return {v: sorted(self._leaf_sets[v]) for v in sorted(self.nodes) if not self.nodes[v].is_leaf}

    def describe(self) -> str:
        lines = []
        for v in sorted(self.nodes, key=lambda k: (self.nodes[k].tier, k)):
            n = self.nodes[v]
            dims = n.model.layer_dims if n.model is not None and hasattr(n.model, "layer_dims") else None
            lines.append(f"{v}\ttier={n.tier}\tparent={n.parent or '-'}\t"
                         f"leaves={','.join(sorted(self._leaf_sets[v]))}\tmodel={dims}")
        return "\n".join(lines)

    def to_spec(self) -> str:
        def fmt(v):
            kids = self.nodes[v].children
            return v if not kids else f"{v}({','.join(fmt(c) for c in kids)})"
        return fmt(self.root)


# -- migration ----------------------------------------------------------------

def param_count_descriptor(node: Node) -> int:
    return node.model.param_count


@dataclass(frozen=True)
class ProtocolKind:
    """How an interaction protocol constrains parent/child model structures.

    ``equivalence`` protocols relate every pair of models, so any node may be
    re-parented. ``partial_order`` protocols require
    ``leq(descriptor(child), descriptor(parent))`` on every edge.
    """

    kind: str = "equivalence"
    descriptor: Callable[[Node], Any] = param_count_descriptor
    leq: Callable[[Any, Any], bool] = operator.le

    def __post_init__(self):
        if self.kind not in ("equivalence", "partial_order"):
            raise ValueError(f"unknown protocol kind {self.kind!r}")


EQUIVALENCE = ProtocolKind("equivalence")


@dataclass(frozen=True)
class MigrationCheck:
    legal: bool
    reason: str = ""

    def __bool__(self) -> bool:
        return self.legal


def check_migration(topo: TreeTopology, protocol: ProtocolKind, v1: str,
                    new_parent: str) -> MigrationCheck:
    node, target = topo.node(v1), topo.node(new_parent)
    if node.parent is None:
        return MigrationCheck(False, f"{v1} is the root")
    if target.is_leaf:
        return MigrationCheck(False, f"{new_parent} is a leaf")
    if new_parent in topo.subtree(v1):
        return MigrationCheck(False, f"{new_parent} lies in the subtree of {v1} (cycle)")
    if target.tier != topo.node(node.parent).tier:
        return MigrationCheck(False, f"{new_parent} is on tier {target.tier}, "
                                     f"current parent on tier {topo.node(node.parent).tier}")
    if new_parent != node.parent and len(topo.node(node.parent).children) == 1:
        # the old parent would become a leaf above the last tier
        return MigrationCheck(False, f"{node.parent} would be left without children")
    if protocol.kind == "partial_order":
        a, b = protocol.descriptor(node), protocol.descriptor(target)
        if not protocol.leq(a, b):
            return MigrationCheck(False, f"Model({v1})={a!r} is not below Model({new_parent})={b!r}")
    return MigrationCheck(True)


@dataclass
class MigrationResult:
    moved: str
    old_parent: str
    new_parent: str
    dropped_at: List[str]
    gained_at: List[str]
    # (edge child, edge class, records) for each link the re-sent embeddings cross
    transfers: List[tuple]


def migrate(topo: TreeTopology, v1: str, new_parent: str,
            protocol: ProtocolKind = EQUIVALENCE) -> MigrationResult:
    """Re-parent ``v1`` and re-route its subtree's embedding blocks.

    Raises ``TopologyError`` without touching the tree when the move is illegal.
    """
    verdict = check_migration(topo, protocol, v1, new_parent)
    if not verdict:
        raise TopologyError(f"illegal migration of {v1} under {new_parent}: {verdict.reason}")
    old_parent = topo.nodes[v1].parent
    assert old_parent is not None
    origins = topo.leaf_set(v1)
    before = topo.ancestors(v1)

    topo.nodes[old_parent].children.remove(v1)
    topo.nodes[new_parent].children.append(v1)
    topo.nodes[v1].parent = new_parent
    topo._refresh()
    after = topo.ancestors(v1)

    dropped = [a for a in before if a not in after]
    gained = [a for a in after if a not in before]
    blocks = {o: topo.nodes[v1].store[o] for o in sorted(origins) if o in topo.nodes[v1].store}
    for a in dropped:
        for o in origins:
            topo.nodes[a].store.pop(o, None)
    records = sum(len(b) for b in blocks.values())
    transfers = []
    hop = v1
    for a in gained:
        topo.nodes[a].store.update(blocks)
        transfers.append((hop, topo.edge_class(hop), records))
        hop = a
    topo.check_invariants()
    return MigrationResult(v1, old_parent, new_parent, dropped, gained, transfers)
