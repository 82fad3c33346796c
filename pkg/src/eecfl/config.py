"""Experiment configuration: TOML loading and structural validation."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .topology import TopologyError, TreeTopology

MODES = ("fedeec", "fedagg", "hierfavg")


class ConfigError(ValueError):
    def __init__(self, diagnostics: List[str]):
        super().__init__("invalid config:\n  " + "\n  ".join(diagnostics))
        self.diagnostics = diagnostics


@dataclass
class Migration:
    round: int
    node: str
    new_parent: str


@dataclass
class ExperimentConfig:
    topology: str
    tier_dims: List[List[int]]            # tier 1 (cloud) first
    overrides: Dict[str, List[int]] = field(default_factory=dict)
    n: int = 4000
    n_test: int = 1000
    num_classes: int = 4
    input_dim: int = 16
    class_sep: float = 5.0
    alpha: float = 2.0
    latent_dim: int = 3
    noise: float = 0.1
    data_seed: int = 0
    task_seed: int = 0
    embed_dim: int = 4
    ae_hidden: int = 8
    ae_epochs: int = 60
    ae_lr: float = 0.05
    ae_public_n: int = 5000
    ae_mse_max: float = 0.05
    rounds: int = 30
    lr: float = 0.001
    batch_size: int = 8
    local_epochs: int = 1
    beta: float = 1.5
    gamma: float = 1.0
    temperature: float = 0.5
    student_temperature: bool = False
    coalesce_parent_rounds: bool = False
    kappa1: int = 1
    kappa2: int = 1
    seed: int = 0
    skr_enabled: bool = True
    queue_capacity: int = 20
    migrations: List[Migration] = field(default_factory=list)
    mode: str = "fedeec"
    raw: Dict[str, Any] = field(default_factory=dict, repr=False)

    def dims_for(self, topo: TreeTopology, node: str) -> List[int]:
        if node in self.overrides:
            return list(self.overrides[node])
        return list(self.tier_dims[topo.node(node).tier - 1])

    def with_overrides(self, **changes) -> "ExperimentConfig":
        new = copy.deepcopy(self)
        for k, v in changes.items():
            if not hasattr(new, k):
                raise AttributeError(k)
            setattr(new, k, v)
        return new


# section -> {toml key: attribute}
_KEYS = {
    "topology": {"spec": "topology", "root": "_root", "children": "_children"},
    "models": {"tiers": "tier_dims", "overrides": "overrides"},
    "data": {"n": "n", "n_test": "n_test", "classes": "num_classes", "input_dim": "input_dim",
             "class_sep": "class_sep", "alpha": "alpha", "latent_dim": "latent_dim", "noise": "noise",
             "seed": "data_seed", "task_seed": "task_seed"},
    "autoencoder": {"embed_dim": "embed_dim", "hidden": "ae_hidden", "epochs": "ae_epochs",
                    "lr": "ae_lr", "public_n": "ae_public_n", "mse_max": "ae_mse_max"},
    "train": {"rounds": "rounds", "lr": "lr", "batch_size": "batch_size", "local_epochs": "local_epochs",
              "beta": "beta", "gamma": "gamma", "temperature": "temperature",
              "student_temperature": "student_temperature",
              "coalesce_parent_rounds": "coalesce_parent_rounds", "kappa1": "kappa1",
              "kappa2": "kappa2", "seed": "seed"},
    "skr": {"enabled": "skr_enabled", "capacity": "queue_capacity"},
    "migrations": {"schedule": "migrations"},
    "mode": {"name": "mode"},
}


def from_dict(raw: Dict[str, Any]) -> ExperimentConfig:
    """Build and validate a config from parsed TOML; raises ConfigError listing every problem."""
    diags: List[str] = []
    kwargs: Dict[str, Any] = {}
    for section, body in raw.items():
        if section not in _KEYS:
            diags.append(f"{section}: unknown section")
            continue
        if not isinstance(body, dict):
            diags.append(f"{section}: expected a table")
            continue
        for key, value in body.items():
            if key not in _KEYS[section]:
                diags.append(f"{section}.{key}: unknown key")
            else:
                kwargs[_KEYS[section][key]] = value
    # structured form: root = "r" plus a [topology.children] table
    if "_root" in kwargs or "_children" in kwargs:
        if "topology" in kwargs:
            diags.append("topology: give either spec or root/children, not both")
        kwargs["topology"] = {"root": kwargs.pop("_root", None), "children": kwargs.pop("_children", {})}
    for required in ("topology", "tier_dims"):
        if required not in kwargs:
            diags.append({"topology": "topology.spec", "tier_dims": "models.tiers"}[required] + ": required")
    if diags:
        raise ConfigError(diags)
    migrations = []
    for i, m in enumerate(kwargs.pop("migrations", [])):
        try:
            migrations.append(Migration(int(m["round"]), str(m["node"]), str(m["new_parent"])))
        except (KeyError, TypeError, ValueError):
            diags.append(f"migrations.schedule[{i}]: needs round, node and new_parent")
    cfg = ExperimentConfig(migrations=migrations, raw=raw, **kwargs)
    diags += validate(cfg)
    if diags:
        raise ConfigError(diags)
    return cfg


def _param_count(dims: List[int]) -> int:
    return sum(dims[i] * dims[i + 1] + dims[i + 1] for i in range(len(dims) - 1))


def validate(cfg: ExperimentConfig) -> List[str]:
    diags: List[str] = []

    def need(cond: bool, where: str, msg: str):
        if not cond:
            diags.append(f"{where}: {msg}")

    topo = None
    try:
        topo = TreeTopology.build(cfg.topology)
    except TopologyError as exc:
        diags.append(f"topology.spec: {exc}")

    need(cfg.mode in MODES, "mode.name", f"must be one of {', '.join(MODES)}")
    need(cfg.n >= cfg.num_classes, "data.n", "must be at least the class count")
    need(cfg.n_test >= 1, "data.n_test", "must be positive")
    need(cfg.num_classes >= 2, "data.classes", "must be >= 2")
    need(cfg.alpha > 0, "data.alpha", "must be positive")
    need(cfg.class_sep >= 0, "data.class_sep", "must be non-negative")
    need(0 < cfg.embed_dim, "autoencoder.embed_dim", "must be positive")
    need(cfg.ae_epochs >= 0, "autoencoder.epochs", "must be non-negative")
    need(cfg.ae_lr > 0, "autoencoder.lr", "must be positive")
    need(cfg.rounds >= 0, "train.rounds", "must be non-negative")
    need(cfg.lr > 0, "train.lr", "must be positive")
    need(cfg.batch_size >= 1, "train.batch_size", "must be >= 1")
    need(cfg.local_epochs >= 0, "train.local_epochs", "must be non-negative")
    need(cfg.beta >= 0, "train.beta", "must be non-negative")
    need(cfg.gamma >= 0, "train.gamma", "must be non-negative")
    need(cfg.temperature > 0, "train.temperature", "must be positive")
    need(cfg.kappa1 >= 0 and cfg.kappa2 >= 1, "train.kappa1", "need kappa1 >= 0 and kappa2 >= 1")
    need(cfg.queue_capacity >= 1, "skr.capacity", "must be >= 1")

    for i, dims in enumerate(cfg.tier_dims):
        where = f"models.tiers[{i}]"
        if not (isinstance(dims, list) and len(dims) >= 2 and all(isinstance(d, int) and d > 0 for d in dims)):
            diags.append(f"{where}: must be a list of >= 2 positive integers")
            continue
        need(dims[0] == cfg.input_dim, where, f"input width {dims[0]} != data.input_dim {cfg.input_dim}")
        need(dims[-1] == cfg.num_classes, where, f"output width {dims[-1]} != data.classes {cfg.num_classes}")
    for node, dims in cfg.overrides.items():
        where = f"models.overrides.{node}"
        if topo is not None and node not in topo:
            diags.append(f"{where}: unknown node")
        if not (isinstance(dims, list) and len(dims) >= 2 and dims[0] == cfg.input_dim
                and dims[-1] == cfg.num_classes):
            diags.append(f"{where}: must map input_dim to classes")
    if diags or topo is None:
        return diags

    need(len(cfg.tier_dims) == topo.depth, "models.tiers",
         f"{len(cfg.tier_dims)} tiers configured, topology has {topo.depth}")
    if diags:
        return diags
    # model scale may only grow towards the root
    for v in sorted(topo.nodes):
        p = topo.parent(v)
        if p is None:
            continue
        small, big = _param_count(cfg.dims_for(topo, v)), _param_count(cfg.dims_for(topo, p))
        if small > big:
            diags.append(f"models: tier monotonicity violated on edge {v}->{p} "
                         f"({small} params > {big} params)")
    if cfg.embed_dim >= cfg.input_dim:
        diags.append("autoencoder.embed_dim: must be smaller than data.input_dim")
    ae_params = _param_count([cfg.input_dim, cfg.ae_hidden, cfg.embed_dim]) + \
        _param_count([cfg.embed_dim, cfg.ae_hidden, cfg.input_dim])
    smallest = min(_param_count(cfg.dims_for(topo, v)) for v in topo.leaves)
    if ae_params >= 0.1 * smallest:
        diags.append(f"autoencoder: {ae_params} params is not below 10% of the smallest end model ({smallest})")
    for i, m in enumerate(cfg.migrations):
        where = f"migrations.schedule[{i}]"
        need(m.node in topo, where, f"unknown node {m.node!r}")
        need(m.new_parent in topo, where, f"unknown node {m.new_parent!r}")
        need(1 <= m.round <= max(cfg.rounds, 1), where, f"round {m.round} outside 1..{cfg.rounds}")
    return diags


def load_text(text: str) -> ExperimentConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([f"<file>: {exc}"]) from None
    return from_dict(raw)


def load(path) -> ExperimentConfig:
    return load_text(Path(path).read_text())


def default_config_text() -> str:
    return resources.files("eecfl").joinpath("configs/default.toml").read_text()


def default_config() -> ExperimentConfig:
    return load_text(default_config_text())
