"""Self-knowledge rectification of transferred class probabilities.

A teacher keeps, per class, a bounded FIFO of the label-class probabilities
it produced on correctly attributed samples. When a new prediction puts
more mass on some other class than on the label, the label probability is
replaced by the queue mean and the remaining mass is rescaled so the
result stays as close as possible (in KL) to the original prediction.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from .nnkernel import PROB_FLOOR


class EmptyQueueError(LookupError):
    """No correctly attributed history for the requested class."""


class KnowledgeQueue:
    """Per-class bounded FIFOs of correctly attributed label probabilities."""

    def __init__(self, num_classes: int, capacity: int = 20):
        if capacity < 1:
            raise ValueError("queue capacity must be positive")
        self.capacity = capacity
        self.queues: List[deque] = [deque(maxlen=capacity) for _ in range(num_classes)]

    @property
    def num_classes(self) -> int:
        return len(self.queues)

    def __getitem__(self, c: int) -> deque:
        return self.queues[c]

    def push(self, c: int, p_c: float) -> None:
        if not 0.0 < p_c <= 1.0:
            raise ValueError(f"queued probability must lie in (0, 1], got {p_c}")
        self.queues[c].append(float(p_c))

    def occupancy(self) -> float:
        return float(np.mean([len(q) for q in self.queues]))

    def snapshot(self) -> List[List[float]]:
        return [list(q) for q in self.queues]


def queue_push(queues: KnowledgeQueue, c: int, p_c: float) -> KnowledgeQueue:
    queues.push(c, p_c)
    return queues


def detect_misattribution(P: np.ndarray, c: int) -> bool:
    """True when some other class is strictly more probable than the label."""
    P = np.asarray(P)
    return bool(np.any(P > P[c]))


def rectified_label_prob(queues: KnowledgeQueue, c: int) -> float:
    """Mean of the stored probabilities (over the current length, not capacity)."""
    q = queues[c]
    if not q:
        raise EmptyQueueError(f"knowledge queue for class {c} is empty")
    return sum(q) / len(q)


def redistribute(P: np.ndarray, c: int, p_c_prime: float) -> np.ndarray:
    """Set the label entry to ``p_c_prime`` and rescale the rest proportionally.

    When the non-label mass of ``P`` is (numerically) zero, the leftover mass
    is spread uniformly over the non-label classes instead.
    """
    if not 0.0 < p_c_prime < 1.0:
        raise ValueError(f"rectified probability must lie in (0, 1), got {p_c_prime}")
    P = np.asarray(P, dtype=np.float64)
    rest = np.ones(len(P), dtype=bool)
    rest[c] = False
    mass = P[rest].sum()
    if mass < 1e-9:
        Q = np.where(rest, (1.0 - p_c_prime) / (len(P) - 1), 0.0)
    else:
        Q = P * ((1.0 - p_c_prime) / mass)
    Q[c] = p_c_prime
    return Q


@dataclass
class KnowledgeMessage:
    distribution: np.ndarray
    rectified: bool
    label: int
    tag: int = -1


CORRECT, UNRECTIFIED, RECTIFIED = "correct", "misattributed_unrectified", "misattributed_rectified"


def produce_knowledge(P: np.ndarray, c: int, queues: KnowledgeQueue,
                      tag: int = -1) -> Tuple[KnowledgeMessage, str]:
    """Teacher-side handling of one prediction; returns the message and its outcome."""
    P = np.asarray(P, dtype=np.float64)
    if not detect_misattribution(P, c):
        queues.push(c, P[c])
        return KnowledgeMessage(P, False, c, tag), CORRECT
    if not queues[c]:
        return KnowledgeMessage(P, False, c, tag), UNRECTIFIED
    p_prime = min(max(rectified_label_prob(queues, c), PROB_FLOOR), 1.0 - PROB_FLOOR)
    return KnowledgeMessage(redistribute(P, c, p_prime), True, c, tag), RECTIFIED


def rectify_batch(probs: np.ndarray, labels: np.ndarray,
                  queues: KnowledgeQueue) -> Tuple[np.ndarray, np.ndarray, dict]:
    """Run :func:`produce_knowledge` over rows in order.

    Returns the emitted distributions, the rectified flags and outcome counts.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    out = probs.copy()
    flags = np.zeros(len(labels), dtype=bool)
    counts = {CORRECT: 0, UNRECTIFIED: 0, RECTIFIED: 0}
    label_p = probs[np.arange(len(labels)), labels]
    # misattribution does not depend on queue state; only the queue walk is sequential
    misattributed = np.any(probs > label_p[:, None], axis=1)
    for i in range(len(labels)):
        c = int(labels[i])
        if not misattributed[i]:
            queues.push(c, label_p[i])
            counts[CORRECT] += 1
        elif not queues[c]:
            counts[UNRECTIFIED] += 1
        else:
            p_prime = min(max(rectified_label_prob(queues, c), PROB_FLOOR), 1.0 - PROB_FLOOR)
            out[i] = redistribute(probs[i], c, p_prime)
            flags[i] = True
            counts[RECTIFIED] += 1
    return out, flags, counts
