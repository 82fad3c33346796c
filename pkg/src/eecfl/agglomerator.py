"""Bottom-up knowledge agglomeration over the whole tree.

One run: pre-train the autoencoder, generate and partition data, build the
tree, push every leaf's embeddings up to the root, then repeat the
recursive pair-round schedule for the configured number of rounds while
tracking cloud accuracy and traffic.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np

from . import autocodec, datagen
from .autocodec import AutoEncoder
from .bsbodp import DistillConfig, DirectionalReport, bsbodp_pair_round
from .config import ExperimentConfig
from .nnkernel import DenseModel, predict
from .skr import CORRECT, RECTIFIED, UNRECTIFIED, KnowledgeQueue
from .telemetry import RoundMetrics, TrafficLedger
from .topology import EQUIVALENCE, EmbeddingBlock, TreeTopology, migrate


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


def node_rng(seed: int, node: str, round_index: int, stream: str = "train") -> np.random.Generator:
    """Independent stream per (seed, node, round, purpose)."""
    return np.random.default_rng([seed, zlib.crc32(node.encode()), round_index, zlib.crc32(stream.encode())])


def evaluate(model: DenseModel, test: datagen.LabeledDataset) -> float:
    """Fraction of test samples whose arg-max logit matches the label."""
    return float(np.mean(predict(model, test.inputs) == test.labels))


@lru_cache(maxsize=8)
def _pretrained(num_classes, input_dim, class_sep, latent_dim, noise, task_seed, data_seed,
                public_n, embed_dim, hidden, epochs, lr, mse_max) -> AutoEncoder:
    corpus = datagen.public_corpus(public_n, num_classes, input_dim, class_sep, data_seed,
                                   latent_dim=latent_dim, noise=noise, task_seed=task_seed)
    return autocodec.pretrain(corpus, epochs, lr, seed=data_seed, embed_dim=embed_dim,
                              hidden=hidden, mse_max=mse_max)


def pretrained_autoencoder(cfg: ExperimentConfig) -> AutoEncoder:
    # pre-training depends only on the task, so runs that differ in training seed share it
    return _pretrained(cfg.num_classes, cfg.input_dim, cfg.class_sep, cfg.latent_dim, cfg.noise,
                       cfg.task_seed, cfg.data_seed, cfg.ae_public_n, cfg.embed_dim, cfg.ae_hidden,
                       cfg.ae_epochs, cfg.ae_lr, cfg.ae_mse_max)


def make_data(cfg: ExperimentConfig):
    kw = dict(latent_dim=cfg.latent_dim, noise=cfg.noise, task_seed=cfg.task_seed)
    train = datagen.make_dataset(cfg.n, cfg.num_classes, cfg.input_dim, cfg.class_sep, cfg.data_seed, **kw)
    test = datagen.make_dataset(cfg.n_test, cfg.num_classes, cfg.input_dim, cfg.class_sep,
                                cfg.data_seed + datagen.TEST_SEED_OFFSET, **kw)
    return train, test


@dataclass
class World:
    cfg: ExperimentConfig
    topo: TreeTopology
    train: datagen.LabeledDataset
    test: datagen.LabeledDataset
    ae: Optional[AutoEncoder]
    ledger: TrafficLedger = field(default_factory=TrafficLedger)

    @property
    def client_sizes(self) -> Dict[str, int]:
        return {v: len(self.topo.node(v).data) for v in self.topo.leaves}

    def distill_config(self) -> DistillConfig:
        c = self.cfg
        return DistillConfig(beta=c.beta, gamma=c.gamma, temperature=c.temperature,
                             batch_size=c.batch_size, local_epochs=c.local_epochs, lr=c.lr,
                             student_temperature=c.student_temperature,
                             skr_enabled=c.skr_enabled and c.mode == "fedeec")


def build_world(cfg: ExperimentConfig, uniform_model: bool = False) -> World:
    """Data, partition and tree with per-node models; the autoencoder only when distilling."""
    train, test = make_data(cfg)
    topo = TreeTopology.build(cfg.topology)
    plan = datagen.dirichlet_partition(train, len(topo.leaves), cfg.alpha, cfg.seed)
    for leaf, idx in zip(topo.leaves, plan.client_indices):
        topo.node(leaf).data = train.subset(idx)
    if uniform_model:
        end_dims = cfg.tier_dims[-1]
        base = DenseModel.initialize(end_dims, node_rng(cfg.seed, topo.root, 0, "init"))
        for node in topo.nodes.values():
            node.model = base.copy()
    else:
        for v, node in topo.nodes.items():
            node.model = DenseModel.initialize(cfg.dims_for(topo, v), node_rng(cfg.seed, v, 0, "init"))
            node.queues = KnowledgeQueue(cfg.num_classes, cfg.queue_capacity)
    ae = None if uniform_model else pretrained_autoencoder(cfg)
    return World(cfg, topo, train, test, ae)


def init(world: World) -> None:
    """Leaves encode their data; every ancestor stores the blocks of its subtree."""
    topo, ae = world.topo, world.ae
    for leaf in topo.leaves:
        data = topo.node(leaf).data
        if data is None:
            raise ValueError(f"leaf {leaf} has no dataset")
        block = EmbeddingBlock(leaf, autocodec.encode(ae, data.inputs), data.labels.copy())
        topo.node(leaf).store = {leaf: block}
        hop = leaf
        for anc in topo.ancestors(leaf):
            topo.node(anc).store[leaf] = block
            edge = topo.edge_class(hop)
            world.ledger.add(edge, "up", "embedding", len(block) * ae.embed_dim)
            world.ledger.add(edge, "up", "label", len(block))
            hop = anc


def schedule(topo: TreeTopology, coalesce: bool = False) -> List[str]:
    """Flat order of pair rounds, each named by its child node.

    Children are visited in sorted id order. An internal node runs its pair
    round with its parent after each child subtree, or once after all of
    them when ``coalesce`` is set.
    """
    order: List[str] = []

    def visit(v: str):
        node = topo.node(v)
        kids = sorted(node.children)
        if node.parent is None:
            for u in kids:
                visit(u)
        elif node.is_leaf:
            order.append(v)
        else:
            for u in kids:
                visit(u)
                if not coalesce:
                    order.append(v)
            if coalesce:
                order.append(v)

    visit(topo.root)
    return order


def _tier_losses(topo: TreeTopology, reports: List[DirectionalReport]) -> Dict[str, Dict[str, float]]:
    by_tier: Dict[int, List[DirectionalReport]] = {}
    for r in reports:
        by_tier.setdefault(topo.node(r.student).tier, []).append(r)
    out = {}
    for tier in sorted(by_tier):
        rs = by_tier[tier]
        out[str(tier)] = {
            "total": float(np.mean([r.mean_total for r in rs])),
            "ce": float(np.mean([r.mean_ce for r in rs])),
            "kl": float(np.mean([r.mean_kl for r in rs])),
            "local_ce": float(np.mean([r.mean_local_ce for r in rs])),
        }
    return out


def train_round(world: World, round_index: int) -> dict:
    topo, cfg = world.topo, world.cfg
    dcfg = world.distill_config()
    rngs = {v: node_rng(cfg.seed, v, round_index) for v in topo.nodes}
    reports: List[DirectionalReport] = []
    for child in schedule(topo, cfg.coalesce_parent_rounds):
        reports.extend(bsbodp_pair_round(topo, child, world.ae, dcfg, rngs, world.ledger))
    counts = {CORRECT: 0, UNRECTIFIED: 0, RECTIFIED: 0}
    for r in reports:
        for k in counts:
            counts[k] += r.counts.get(k, 0)
    skr_stats = dict(counts)
    skr_stats["mean_queue_occupancy"] = float(np.mean([n.queues.occupancy() for n in topo.nodes.values()]))
    return {"losses": _tier_losses(topo, reports), "skr": skr_stats, "pairs": len(reports) // 2}


def apply_migrations(world: World, round_index: int) -> None:
    for m in world.cfg.migrations:
        if m.round != round_index:
            continue
        result = migrate(world.topo, m.node, m.new_parent, EQUIVALENCE)
        if world.ae is None:
            continue
        # the moved subtree's embeddings are re-sent along the new path
        for _, edge, records in result.transfers:
            world.ledger.add(edge, "up", "embedding", records * world.ae.embed_dim)
            world.ledger.add(edge, "up", "label", records)


@dataclass
class RunResult:
    cfg: ExperimentConfig
    metrics: List[dict]
    world: World

    @property
    def models(self) -> Dict[str, DenseModel]:
        return {v: n.model for v, n in self.world.topo.nodes.items()}

    @property
    def best_accuracy(self) -> float:
        return max(m["cloud_accuracy"] for m in self.metrics)

    @property
    def final_accuracy(self) -> float:
        return self.metrics[-1]["cloud_accuracy"]


def _metrics(world: World, round_index: int, mode: str, stats: dict) -> dict:
    topo = world.topo
    return RoundMetrics(
        round=round_index, mode=mode,
        cloud_accuracy=evaluate(topo.node(topo.root).model, world.test),
        losses=stats.get("losses", {}), skr=stats.get("skr", {}),
        traffic=world.ledger.snapshot(), leaf_sets=topo.leaf_set_map(),
    ).to_dict()


def _stage(name: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except Exception as exc:  # noqa: BLE001 - re-raised with the stage attached
        raise StageError(name, exc) from exc


def run(cfg: ExperimentConfig, on_round: Optional[Callable[[World, dict], None]] = None) -> RunResult:
    """Execute a full experiment in the configured mode.

    ``on_round`` is called after every round boundary (including round 0)
    with the world and that round's metrics dict.
    """
    if cfg.mode == "hierfavg":
        from .baseline import run_hierfavg
        return run_hierfavg(cfg, on_round)
    world = _stage("setup", build_world, cfg)
    _stage("init", init, world)
    metrics = [_metrics(world, 0, cfg.mode, {})]
    if on_round:
        on_round(world, metrics[-1])
    for t in range(1, cfg.rounds + 1):
        _stage(f"migrate@{t}", apply_migrations, world, t)
        stats = _stage(f"round@{t}", train_round, world, t)
        if not world.topo.store_consistent():
            raise StageError(f"round@{t}", RuntimeError("embedding stores diverged from leaf sets"))
        metrics.append(_metrics(world, t, cfg.mode, stats))
        if on_round:
            on_round(world, metrics[-1])
    return RunResult(cfg, metrics, world)


def metrics_jsonl(metrics: List[dict]) -> str:
    return "".join(json.dumps(m, sort_keys=True) + "\n" for m in metrics)


def write_run(result: RunResult, out_dir) -> Path:
    out = Path(out_dir)
    (out / "models").mkdir(parents=True, exist_ok=True)
    (out / "metrics.jsonl").write_text(metrics_jsonl(result.metrics))
    for v, model in sorted(result.models.items()):
        model.save(out / "models" / f"{v}.txt")
    if result.world.ae is not None:
        (out / "autoencoder.txt").write_text(result.world.ae.to_text())
    return out
