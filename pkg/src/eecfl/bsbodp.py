"""Bridge-sample online distillation between one parent/child pair.

Both nodes decode the same embeddings with the shared frozen decoder, so
their inputs line up sample by sample without exchanging raw data. In each
directional pass the teacher labels the bridge samples with (optionally
rectified) soft predictions and the student fits them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from . import skr
from .autocodec import AutoEncoder, decode
from .nnkernel import (DenseModel, LossBreakdown, distill_loss_grad, leaf_loss_grad,
                       sgd_step, softmax_temp)
from .telemetry import TrafficLedger
from .topology import Node, TreeTopology


@dataclass
class DistillConfig:
    beta: float = 1.5
    gamma: float = 1.0
    temperature: float = 0.5
    batch_size: int = 8
    local_epochs: int = 1
    lr: float = 0.001
    student_temperature: bool = False
    skr_enabled: bool = True

    def __post_init__(self):
        if self.beta < 0 or self.gamma < 0:
            raise ValueError("beta and gamma must be non-negative")
        if self.temperature <= 0 or self.lr <= 0:
            raise ValueError("temperature and lr must be positive")
        if self.batch_size < 1 or self.local_epochs < 0:
            raise ValueError("batch_size must be >= 1 and local_epochs >= 0")


@dataclass
class BridgeBatch:
    embeddings: np.ndarray
    labels: np.ndarray
    samples: np.ndarray
    knowledge: np.ndarray
    rectified: np.ndarray
    counts: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.labels)
        if not (len(self.embeddings) == len(self.samples) == len(self.knowledge) == len(self.rectified) == n):
            raise ValueError("bridge batch rows are misaligned")

    def __len__(self) -> int:
        return len(self.labels)

    def messages(self) -> List[skr.KnowledgeMessage]:
        return [skr.KnowledgeMessage(self.knowledge[i], bool(self.rectified[i]), int(self.labels[i]), i)
                for i in range(len(self))]


def pair_embeddings(topo: TreeTopology, child: str) -> Tuple[np.ndarray, np.ndarray]:
    """Records shared by a child and its parent: those originating under the child."""
    node = topo.node(child)
    blocks = [node.store[o] for o in sorted(topo.leaf_set(child))]
    return (np.concatenate([b.embeddings for b in blocks]),
            np.concatenate([b.labels for b in blocks]))


def teacher_emit(teacher: DenseModel, queues: Optional[skr.KnowledgeQueue], ae: AutoEncoder,
                 embeddings: np.ndarray, labels: np.ndarray, cfg: DistillConfig) -> BridgeBatch:
    """Decode, run the frozen teacher once, and produce one message per sample."""
    if embeddings.ndim != 2 or embeddings.shape[1] != ae.embed_dim:
        raise ValueError(f"embeddings must have width {ae.embed_dim}")
    samples = decode(ae, embeddings)
    probs = softmax_temp(teacher.forward(samples), cfg.temperature)
    if cfg.skr_enabled:
        if queues is None:
            raise ValueError("rectification enabled but teacher has no knowledge queues")
        knowledge, flags, counts = skr.rectify_batch(probs, labels, queues)
    else:
        knowledge, flags = probs, np.zeros(len(labels), dtype=bool)
        counts = {skr.CORRECT: 0, skr.UNRECTIFIED: 0, skr.RECTIFIED: 0}
    return BridgeBatch(embeddings, labels, samples, knowledge, flags, counts)


def student_update(student: DenseModel, batch: BridgeBatch, cfg: DistillConfig,
                   rng: np.random.Generator, private: Optional[Tuple[np.ndarray, np.ndarray]] = None
                   ) -> List[LossBreakdown]:
    """Minibatch SGD on the non-leaf objective, or the leaf objective when ``private`` is given.

    For leaves each step pairs one private minibatch with one bridge
    minibatch; the shorter stream wraps around.
    """
    t = cfg.temperature if cfg.student_temperature else None
    history: List[LossBreakdown] = []
    bs = cfg.batch_size
    for _ in range(cfg.local_epochs):
        b_order = rng.permutation(len(batch))
        b_chunks = [b_order[i:i + bs] for i in range(0, len(b_order), bs)]
        if private is None:
            for ix in b_chunks:
                loss, grads = distill_loss_grad(student, batch.samples[ix], batch.labels[ix],
                                                batch.knowledge[ix], cfg.beta, t)
                sgd_step(student, grads, cfg.lr)
                history.append(loss)
            continue
        px, py = private
        p_order = rng.permutation(len(py))
        p_chunks = [p_order[i:i + bs] for i in range(0, len(p_order), bs)]
        for step in range(max(len(b_chunks), len(p_chunks))):
            ib = b_chunks[step % len(b_chunks)]
            ip = p_chunks[step % len(p_chunks)]
            loss, grads = leaf_loss_grad(student, px[ip], py[ip], batch.samples[ib], batch.labels[ib],
                                         batch.knowledge[ib], cfg.beta, cfg.gamma, t)
            sgd_step(student, grads, cfg.lr)
            history.append(loss)
    return history


@dataclass
class DirectionalReport:
    student: str
    teacher: str
    direction: str
    samples: int
    mean_ce: float
    mean_kl: float
    mean_local_ce: float
    mean_total: float
    counts: dict
    scalars: int


def _mean(history: List[LossBreakdown], attr: str) -> float:
    return float(np.mean([getattr(h, attr) for h in history])) if history else 0.0


def directional_pass(topo: TreeTopology, student_id: str, teacher_id: str, ae: AutoEncoder,
                     cfg: DistillConfig, rng: np.random.Generator, embeddings: np.ndarray,
                     labels: np.ndarray, ledger: Optional[TrafficLedger] = None) -> DirectionalReport:
    student, teacher = topo.node(student_id), topo.node(teacher_id)
    batch = teacher_emit(teacher.model, teacher.queues, ae, embeddings, labels, cfg)
    child = student_id if student.parent == teacher_id else teacher_id
    direction = "up" if child == teacher_id else "down"
    num_classes = batch.knowledge.shape[1]
    if ledger is not None:
        edge = topo.edge_class(child)
        ledger.add(edge, direction, "knowledge", len(batch) * num_classes)
        ledger.add(edge, direction, "label", len(batch))
    private = (student.data.inputs, student.data.labels) if student.is_leaf else None
    history = student_update(student.model, batch, cfg, rng, private)
    return DirectionalReport(student_id, teacher_id, direction, len(batch),
                             _mean(history, "ce_term"), _mean(history, "kl_term"),
                             _mean(history, "local_ce_term"), _mean(history, "total"),
                             batch.counts, len(batch) * (num_classes + 1))


def bsbodp_pair_round(topo: TreeTopology, child: str, ae: AutoEncoder, cfg: DistillConfig,
                      rngs: dict, ledger: Optional[TrafficLedger] = None) -> List[DirectionalReport]:
    """Child learns from parent, then parent learns from child, on the child's records.

    ``rngs`` maps node id to that node's generator for the current round; the
    student's generator drives minibatch order.
    """
    parent = topo.node(child).parent
    if parent is None:
        raise ValueError(f"{child} is the root and has no pair")
    emb, lab = pair_embeddings(topo, child)
    first = directional_pass(topo, child, parent, ae, cfg, rngs[child], emb, lab, ledger)
    second = directional_pass(topo, parent, child, ae, cfg, rngs[parent], emb, lab, ledger)
    return [first, second]
