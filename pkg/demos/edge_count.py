"""
More edges, same data
=====================

The eight end devices are spread over one, two or four edges. The number
of samples is fixed, so each extra edge only changes how knowledge flows.
"""

from eecfl import default_config, run

layouts = {
    1: "r(e1(d1,d2,d3,d4,d5,d6,d7,d8))",
    2: "r(e1(d1,d2,d3,d4),e2(d5,d6,d7,d8))",
    4: "r(e1(d1,d2),e2(d3,d4),e3(d5,d6),e4(d7,d8))",
}

cfg = default_config().with_overrides(rounds=10)
for edges, spec in layouts.items():
    res = run(cfg.with_overrides(topology=spec))
    edge_cloud = res.world.ledger.get("edge-cloud")
    print(f"{edges} edge(s): best {res.best_accuracy:.3f}, edge-cloud scalars {edge_cloud}")
