"""
Heterogeneous end devices
=========================

Per-node overrides give some end devices smaller networks. Distillation
never averages parameters, so mixed structures are fine; parameter
averaging refuses them.
"""

from eecfl import DenseModel, default_config, run
from eecfl.baseline import ProtocolError, aggregate
from eecfl.config import validate

overrides = {"d1": [16, 96, 20, 4], "d2": [16, 96, 20, 4], "d5": [16, 224, 4]}
cfg = default_config().with_overrides(rounds=10, overrides=overrides)
# still must not outgrow the edge, and the autoencoder must stay small
assert validate(cfg) == [], validate(cfg)

res = run(cfg)
for v in sorted(res.world.topo.leaves):
    m = res.models[v]
    print(f"{v}: dims {m.layer_dims}  params {m.param_count}")
print(f"cloud best accuracy {res.best_accuracy:.3f}")

# the averaging protocol has no way to combine these
try:
    aggregate(DenseModel.zeros([16, 64, 48, 4]), [res.models["d1"], res.models["d3"]], [1, 1])
except ProtocolError as exc:
    print("parameter averaging:", exc)
