"""
Distillation weight sweep
=========================

beta scales the KL term against the bridge-sample cross-entropy.
beta = 0 turns the protocol into label-only training on decoded samples.
"""

from eecfl import default_config, run

cfg = default_config().with_overrides(rounds=10)

for beta in (0.0, 0.5, 1.5, 3.0):
    res = run(cfg.with_overrides(beta=beta))
    print(f"beta {beta:>3}: best {res.best_accuracy:.3f}  final {res.final_accuracy:.3f}")
