"""
Moving a device between edges
=============================

d4 re-attaches from e1 to e2 at round 5. Its embeddings are re-sent along
the new path and dropped from e1's store; the run keeps going.
"""

from eecfl import default_config, run
from eecfl.config import Migration
from eecfl.topology import EQUIVALENCE, ProtocolKind, TreeTopology, check_migration

cfg = default_config().with_overrides(rounds=8, migrations=[Migration(5, "d4", "e2")])

def show(world, m):
    sets = m["leaf_sets"]
    print(f"round {m['round']}: acc {m['cloud_accuracy']:.3f}  e1={sets['e1']}  "
          f"stores consistent: {world.topo.store_consistent()}")

run(cfg, on_round=show)

# an ordering-constrained protocol cannot always accept the same move
tree = TreeTopology.build("10(9(8,7),5(4,3))")
by_label = ProtocolKind("partial_order", descriptor=lambda node: int(node.id))
print("equivalence:", bool(check_migration(tree, EQUIVALENCE, "7", "5")))
print("partial order:", check_migration(tree, by_label, "7", "5").reason)
