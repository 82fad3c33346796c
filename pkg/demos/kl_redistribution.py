"""
Where the rectified mass goes
=============================

Raising the label probability to the queue mean and shrinking the rest in
proportion is the closest distribution to the original in relative entropy.
"""

import numpy as np

from eecfl.nnkernel import kl_div
from eecfl.skr import KnowledgeQueue, produce_knowledge, redistribute

P = np.array([0.2, 0.5, 0.3])
Q = redistribute(P, 0, 0.6)
print("P", P, "-> Q", Q)

# any other split of the remaining 0.4 is further away
rng = np.random.default_rng(0)
for _ in range(3):
    other = np.concatenate([[0.6], rng.dirichlet([1, 1]) * 0.4])
    print(f"KL(P||Q) {kl_div(P, Q):.4f}  vs  KL(P||other) {kl_div(P, other):.4f}")

# the queue supplies the new label probability
queues = KnowledgeQueue(3, capacity=20)
for p in (0.7, 0.8, 0.9):
    produce_knowledge(np.array([p, (1 - p) / 2, (1 - p) / 2]), 0, queues)
msg, outcome = produce_knowledge(P, 0, queues)
print(outcome, msg.distribution)
