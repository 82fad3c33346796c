"""
Quickstart: one distillation run on the default tree
=====================================================

Two edges, four end devices each, tier models growing towards the cloud.
"""

from eecfl import default_config, run

cfg = default_config().with_overrides(rounds=10)
print(f"topology {cfg.topology}, {cfg.rounds} rounds")

# print accuracy as the rounds come in
def show(world, m):
    print(f"round {m['round']:>2}  cloud accuracy {m['cloud_accuracy']:.3f}")

result = run(cfg, on_round=show)
print(result.world.topo.describe())

# per-tier losses of the last round; tier 3 includes the private CE term
for tier, losses in result.metrics[-1]["losses"].items():
    print("tier", tier, {k: round(v, 4) for k, v in losses.items()})
