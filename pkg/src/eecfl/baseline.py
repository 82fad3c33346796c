"""Hierarchical parameter averaging (HierFAVG-style) and isolated-leaf training.

Every node carries the same end-device model. Each cloud round, edges run
``kappa2`` rounds of download / local training / weighted upload with their
leaves, then the cloud averages the edges. Aggregation weights are the
number of samples under each child.
"""

from __future__ import annotations

from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .agglomerator import (RunResult, _metrics, _stage, apply_migrations, build_world, evaluate,
                           node_rng)
from .config import ExperimentConfig
from .nnkernel import DenseModel, ce_loss_grad, sgd_step


class ProtocolError(ValueError):
    """Children cannot be averaged because their model structures differ."""


def aggregation_weights(topo, parent: str) -> Dict[str, int]:
    return {c: sum(len(topo.node(u).data) for u in topo.leaf_set(c)) for c in topo.children(parent)}


def aggregate(parent: DenseModel, children: Sequence[DenseModel], weights: Sequence[float]) -> DenseModel:
    """Overwrite ``parent`` with the weighted parameter average of ``children``."""
    for child in children:
        if child.layer_dims != parent.layer_dims:
            raise ProtocolError(f"cannot average {child.layer_dims} into {parent.layer_dims}")
    w = np.asarray(weights, dtype=np.float64)
    if len(w) != len(children) or np.any(w <= 0):
        raise ValueError("need one positive weight per child")
    stacked = np.stack([c.flat_params() for c in children])
    parent.set_flat_params((w[:, None] * stacked).sum(axis=0) / w.sum())
    return parent


def local_train(model: DenseModel, x: np.ndarray, y: np.ndarray, epochs: int, batch_size: int,
                lr: float, rng: np.random.Generator) -> List[float]:
    losses = []
    for _ in range(epochs):
        order = rng.permutation(len(y))
        for start in range(0, len(y), batch_size):
            ix = order[start:start + batch_size]
            loss, grads = ce_loss_grad(model, x[ix], y[ix])
            sgd_step(model, grads, lr)
            losses.append(loss)
    return losses


def hierfavg_round(world, round_index: int) -> dict:
    topo, cfg, ledger = world.topo, world.cfg, world.ledger
    local_losses: List[float] = []

    def sync(v: str):
        node = topo.node(v)
        if node.is_leaf:
            rng = node_rng(cfg.seed, v, round_index)
            local_losses.extend(local_train(node.model, node.data.inputs, node.data.labels,
                                            cfg.kappa1, cfg.batch_size, cfg.lr, rng))
            return
        kids = sorted(node.children)
        repeats = cfg.kappa2 if node.parent is not None and all(topo.node(c).is_leaf for c in kids) else 1
        weights = aggregation_weights(topo, v)
        for _ in range(repeats):
            for c in kids:
                child = topo.node(c)
                child.model.set_flat_params(node.model.flat_params())
                ledger.add(topo.edge_class(c), "down", "parameters", node.model.param_count)
                sync(c)
                ledger.add(topo.edge_class(c), "up", "parameters", child.model.param_count)
            aggregate(node.model, [topo.node(c).model for c in kids], [weights[c] for c in kids])

    sync(topo.root)
    tier = str(topo.depth)
    mean_local = float(np.mean(local_losses)) if local_losses else 0.0
    return {"losses": {tier: {"total": mean_local, "ce": 0.0, "kl": 0.0, "local_ce": mean_local}},
            "skr": {"correct": 0, "misattributed_unrectified": 0, "misattributed_rectified": 0,
                    "mean_queue_occupancy": 0.0}}


def run_hierfavg(cfg: ExperimentConfig, on_round: Optional[Callable] = None):
    world = _stage("setup", build_world, cfg, uniform_model=True)
    metrics = [_metrics(world, 0, "hierfavg", {})]
    if on_round:
        on_round(world, metrics[-1])
    for t in range(1, cfg.rounds + 1):
        _stage(f"migrate@{t}", apply_migrations, world, t)
        stats = _stage(f"round@{t}", hierfavg_round, world, t)
        metrics.append(_metrics(world, t, "hierfavg", stats))
        if on_round:
            on_round(world, metrics[-1])
    return RunResult(cfg, metrics, world)


def isolated_leaves(cfg: ExperimentConfig) -> Dict[str, float]:
    """Test accuracy of each end model trained alone on its private data.

    Uses the same initialization and per-round minibatch streams as the
    distillation run, for ``rounds * local_epochs`` epochs.
    """
    world = build_world(cfg.with_overrides(mode="hierfavg"), uniform_model=True)
    accs = {}
    for leaf in world.topo.leaves:
        node = world.topo.node(leaf)
        model = DenseModel.initialize(cfg.dims_for(world.topo, leaf), node_rng(cfg.seed, leaf, 0, "init"))
        for t in range(1, cfg.rounds + 1):
            local_train(model, node.data.inputs, node.data.labels, cfg.local_epochs, cfg.batch_size,
                        cfg.lr, node_rng(cfg.seed, leaf, t))
        accs[leaf] = evaluate(model, world.test)
    return accs
