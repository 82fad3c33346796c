"""
Counting scalars on the wire
============================

Distillation pays for embeddings once and then C + 1 scalars per sample
per round. Parameter averaging pays the full model on every link, both
ways, every round.
"""

from eecfl import default_config, run
from eecfl.telemetry import predict_fedeec_traffic, predict_hierfavg_traffic

cfg = default_config().with_overrides(rounds=10, coalesce_parent_rounds=True)

fedeec = run(cfg)
hier = run(cfg.with_overrides(mode="hierfavg"))

sizes = list(fedeec.world.client_sizes.values())
for edge in ("end-edge", "edge-cloud"):
    measured = fedeec.world.ledger.get(edge, "up")
    predicted = predict_fedeec_traffic(sizes, cfg.embed_dim, cfg.num_classes, cfg.rounds)
    print(f"fedeec   {edge:<10} up {measured:>9}  predicted {predicted:>9}")

W = hier.world.topo.node("d1").model.param_count
print(f"hierfavg end-edge   up {hier.world.ledger.get('end-edge', 'up'):>9}  "
      f"predicted {predict_hierfavg_traffic([W] * 8, cfg.rounds):>9}")

ratio = fedeec.world.ledger.get("end-edge") / hier.world.ledger.get("end-edge")
print(f"end-edge traffic, fedeec / hierfavg: {ratio:.3f}")

# the literal schedule repeats the edge-cloud pair once per child
literal = run(cfg.with_overrides(coalesce_parent_rounds=False))
print("edge-cloud up, literal schedule:", literal.world.ledger.get("edge-cloud", "up"))
