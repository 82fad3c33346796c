"""
Rectification on vs off
=======================

FedEEC and FedAgg differ only in whether the teacher repairs misattributed
predictions before sending them. Same seeds, same data, same schedule.
"""

import numpy as np

from eecfl import default_config, run

cfg = default_config().with_overrides(rounds=15)
seeds = [0, 1, 2]

rows = []
for seed in seeds:
    on = run(cfg.with_overrides(seed=seed, mode="fedeec"))
    off = run(cfg.with_overrides(seed=seed, mode="fedagg"))
    rows.append((on.best_accuracy, off.best_accuracy))
    skr = on.metrics[-1]["skr"]
    print(f"seed {seed}: fedeec {on.best_accuracy:.3f}  fedagg {off.best_accuracy:.3f}  "
          f"(last round: {skr['misattributed_rectified']} rectified, "
          f"{skr['misattributed_unrectified']} sent as-is, {skr['correct']} correct)")

rows = np.array(rows)
print("mean best accuracy  fedeec %.4f  fedagg %.4f" % tuple(rows.mean(axis=0)))
