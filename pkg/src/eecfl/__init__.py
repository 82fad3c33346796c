"""Hierarchical federated learning over end-edge-cloud trees via bridge-sample distillation."""

from .agglomerator import RunResult, evaluate, run
from .config import ExperimentConfig, default_config, load
from .nnkernel import DenseModel
from .topology import TreeTopology

__all__ = ["DenseModel", "ExperimentConfig", "RunResult", "TreeTopology", "default_config",
           "evaluate", "load", "run"]
__version__ = "0.1.0"
