"""Synthetic classification data and Dirichlet non-IID partitioning.

Samples come from a mixture of anisotropic Gaussian clusters living in a
low-dimensional latent space, linearly lifted into ``input_dim`` dimensions
with a little isotropic noise. The task geometry (means, per-class scales,
lifting matrix) depends only on ``task_seed``; the sample draw depends on
``seed``. This lets train, test and the public autoencoder corpus share one
distribution while staying disjoint.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np

PUBLIC_SEED_OFFSET = 1_000_003
TEST_SEED_OFFSET = 7_919


@dataclass
class LabeledDataset:
    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int
    seed: int

    def __post_init__(self):
        if len(self.inputs) == 0 or len(self.inputs) != len(self.labels):
            raise ValueError("dataset needs N > 0 aligned inputs and labels")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise ValueError("label out of range")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, indices) -> "LabeledDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(self.inputs[idx], self.labels[idx], self.num_classes, self.seed)

    def class_histogram(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)


@dataclass
class PartitionPlan:
    client_indices: List[np.ndarray]
    alpha: float
    seed: int

    @property
    def sizes(self) -> List[int]:
        return [len(ix) for ix in self.client_indices]


@dataclass(frozen=True)
class TaskGeometry:
    means: np.ndarray      # (C, latent_dim)
    scales: np.ndarray     # (C, latent_dim) per-axis std
    lift: np.ndarray       # (latent_dim, input_dim)
    noise: float
    center: np.ndarray     # standardization, computed from the mixture moments
    spread: np.ndarray


def task_geometry(num_classes: int, input_dim: int, class_sep: float,
                  latent_dim: int = 3, noise: float = 0.1, task_seed: int = 0) -> TaskGeometry:
    rng = np.random.default_rng([task_seed, num_classes, input_dim, latent_dim])
    directions = rng.normal(size=(num_classes, latent_dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    means = directions * (class_sep / 2.0)
    scales = rng.uniform(0.5, 1.5, size=(num_classes, latent_dim))
    lift = rng.normal(size=(latent_dim, input_dim)) / np.sqrt(latent_dim)

    # exact per-dimension moments of the (equal-weight) mixture
    lifted_means = means @ lift
    center = lifted_means.mean(axis=0)
    within = np.mean([(lift.T ** 2) @ (s ** 2) for s in scales], axis=0)
    between = ((lifted_means - center) ** 2).mean(axis=0)
    spread = np.sqrt(within + between + noise ** 2)
    return TaskGeometry(means, scales, lift, noise, center, spread)


def make_dataset(n: int, num_classes: int, input_dim: int, class_sep: float, seed: int,
                 latent_dim: int = 3, noise: float = 0.1, task_seed: int = 0) -> LabeledDataset:
    """Balanced draw of ``n`` standardized samples (class counts differ by at most one)."""
    if num_classes < 2 or n < num_classes or input_dim < 1:
        raise ValueError(f"need C >= 2, n >= C and input_dim >= 1 (got n={n}, C={num_classes}, "
                         f"input_dim={input_dim})")
    geo = task_geometry(num_classes, input_dim, class_sep, latent_dim, noise, task_seed)
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % num_classes)
    latent = geo.means[labels] + rng.normal(size=(n, latent_dim)) * geo.scales[labels]
    x = latent @ geo.lift + rng.normal(scale=noise, size=(n, input_dim))
    x = (x - geo.center) / geo.spread
    return LabeledDataset(x, labels.astype(np.int64), num_classes, seed)


def public_corpus(n: int, num_classes: int, input_dim: int, class_sep: float, seed: int,
                  **kwargs) -> np.ndarray:
    """Unlabeled inputs from the same task, drawn from a reserved seed range."""
    return make_dataset(n, num_classes, input_dim, class_sep, seed + PUBLIC_SEED_OFFSET,
                        **kwargs).inputs


def dirichlet_partition(ds: LabeledDataset, num_clients: int, alpha: float, seed: int,
                        max_retries: int = 100) -> PartitionPlan:
    """Split each class across clients with Dirichlet(alpha) proportions.

    Each class row is drawn as normalized Gamma(alpha) variates. While some
    client ends up empty, only that client's variates are redrawn.
    """
    if num_clients < 1:
        raise ValueError("need at least one client")
    if num_clients > len(ds):
        raise ValueError(f"{num_clients} clients exceed {len(ds)} samples")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    rng = np.random.default_rng(seed)
    by_class = [rng.permutation(np.flatnonzero(ds.labels == c)) for c in range(ds.num_classes)]
    gammas = rng.gamma(alpha, size=(ds.num_classes, num_clients))
    for _ in range(max_retries + 1):
        buckets: List[List[np.ndarray]] = [[] for _ in range(num_clients)]
        for c, idx in enumerate(by_class):
            props = gammas[c] / gammas[c].sum()
            cuts = (np.cumsum(props)[:-1] * len(idx)).astype(np.int64)
            for k, part in enumerate(np.split(idx, cuts)):
                buckets[k].append(part)
        client_indices = [np.sort(np.concatenate(b)) for b in buckets]
        empty = [k for k, ix in enumerate(client_indices) if len(ix) == 0]
        if not empty:
            return PartitionPlan(client_indices, alpha, seed)
        gammas[:, empty] = rng.gamma(alpha, size=(ds.num_classes, len(empty)))
    raise RuntimeError(f"could not give every client a sample after {max_retries} redraws")


def histogram_distance(ds: LabeledDataset, plan: PartitionPlan) -> float:
    """Mean total-variation distance between client and global class histograms."""
    global_hist = ds.class_histogram() / len(ds)
    dists = []
    for ix in plan.client_indices:
        h = np.bincount(ds.labels[ix], minlength=ds.num_classes) / len(ix)
        dists.append(0.5 * np.abs(h - global_hist).sum())
    return float(np.mean(dists))
